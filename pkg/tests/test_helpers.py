import json
import logging
import math

import numpy as np
import pytest

from crpevi.helpers import derive_seed, dumps, format_real, setup_logger


def test_derived_seeds_are_stable_and_distinct():
    seeds = [derive_seed(7, i) for i in range(1000)]
    assert seeds == [derive_seed(7, i) for i in range(1000)]
    assert len(set(seeds)) == 1000
    assert all(0 <= s < 2**64 for s in seeds)
    assert derive_seed(7, 0) != derive_seed(8, 0)


@pytest.mark.parametrize("value", [0.1, 1 / 3, 2.0**-40, 123456789.123, -0.0])
def test_reals_keep_every_bit(value):
    assert float(format_real(value)) == value


def test_non_finite_reals():
    assert format_real(math.nan) == "NaN"
    assert format_real(math.inf) == "Infinity"
    assert format_real(-math.inf) == "-Infinity"


def test_dumps_is_compact_and_ordered():
    text = dumps({"b": np.int64(2), "a": [np.float64(0.5), True, None], "s": "é"})
    assert text == '{"b":2,"a":[0.5,true,null],"s":"é"}'
    assert json.loads(dumps(np.eye(2))) == [[1.0, 0.0], [0.0, 1.0]]


def test_dumps_rejects_unknown_types():
    with pytest.raises(TypeError):
        dumps({"x": object()})


def test_logger_writes_and_resets_its_file(tmp_path):
    path = tmp_path / "run.log"
    path.write_text("stale\n", encoding="utf-8")
    logger = setup_logger("crpevi.test_helpers", str(path), "DEBUG")
    logger.info("fresh line")
    for handler in logger.handlers:
        handler.flush()
    text = path.read_text(encoding="utf-8")
    assert "stale" not in text
    assert "INFO [crpevi.test_helpers] fresh line" in text
    setup_logger("crpevi.test_helpers", str(path), "WARNING")
    assert len(logger.handlers) == 1
    assert logger.level == logging.WARNING
