from dataclasses import replace

import pytest

from shockev.blast import BlastConstants
from shockev.config import MeasureConfig, RunConfig, dump_config, load_config
from shockev.errors import ConfigError
from shockev.frontx import FrontConfig


def test_default_round_trip():
    cfg = RunConfig()
    assert load_config(text=dump_config(cfg)) == cfg


def test_modified_round_trip(tmp_path):
    cfg = RunConfig(front=FrontConfig(rho=0.2, window_fracs=(0.25, 0.75)), angles="0:180:10",
                    workers=4, measure=MeasureConfig(4, (5.0, 7.5)),
                    physics=BlastConstants(c0=343.0), seed=9)
    path = tmp_path / "run.cfg"
    path.write_text(dump_config(cfg))
    back = load_config(path)
    assert back == cfg
    assert dump_config(back) == dump_config(cfg)


def test_partial_file_keeps_defaults():
    cfg = load_config(text="[measure]\ndegree = 2\n")
    assert cfg == replace(RunConfig(), measure=MeasureConfig(2))


def test_ledger_is_flat_and_complete():
    led = RunConfig().ledger()
    assert led["physics.c0"] == 340.0 and led["extract.rho"] == 0.15
    assert led["measure.distances"] == [4.0, 6.0, 8.0]
    assert all(isinstance(k, str) and "." in k for k in led)


@pytest.mark.parametrize("text", [
    "[extract]\nrhoo = 0.1\n",
    "[physic]\nc0 = 340\n",
    "[measure]\ndegree = seven\n",
    "[measure]\ndegree = 9\n",
    "[extract]\nangles = 90:10:5\n",
    "[extract]\nworkers = 0\n",
    "[calibrate]\nrefine = maybe\n",
    "[physics]\neta = 0.5\n",
    "no section header\n",
])
def test_bad_config_rejected(text):
    with pytest.raises(ConfigError):
        load_config(text=text)


def test_missing_file():
    with pytest.raises(ConfigError):
        load_config("/nonexistent/run.cfg")
