from pytest import mark, raises

from est_engine.exceptions import ConfigError
from est_engine.presets import Preset, list_presets
from est_engine.scheduler import SamplingScheduler


def test_get() -> None:
    found = Preset.get("table-1")

    assert found == Preset(
        description="Three equal stages with the practical rates.",
        end_steps=[50000, 100000, 150000],
        rates=[(0.5, 0.5, 0.5), (0.5, 0.5, 1.0), (1.0, 1.0, 1.0)],
    )


def test_get__unknown() -> None:
    with raises(ConfigError) as ex:
        Preset.get("foo")

    assert str(ex.value).startswith('Preset "foo" not found')


def test_list_presets() -> None:
    assert list_presets() == [
        "full",
        "one-stage",
        "practical-gpt2",
        "practical-tinyllama",
        "table-1",
        "three-stage-alt",
        "two-stage-a",
        "two-stage-b",
        "two-stage-c",
    ]


@mark.parametrize("name", list_presets())
def test_every_preset_builds_a_scheduler(name: str) -> None:
    found = Preset.get(name)

    sched = SamplingScheduler.build(found.end_steps, found.rates)

    assert sched.total_steps == found.end_steps[-1]
