import numpy as np
import pytest

from boltzmann_nsf.cache import CACHE_VERSION, OperatorCache, operator_key
from boltzmann_nsf.config import ENV_PREFIX, load_config
from boltzmann_nsf.exceptions import CacheVersionError, ConfigError
from boltzmann_nsf.model import KineticModel


@pytest.fixture(autouse=True)
def _isolated(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    for name in ("OUTPUT", "CACHE", "THREADS", "SEED", "CONFIG"):
        monkeypatch.delenv(ENV_PREFIX + name, raising=False)


def _write(tmp_path, text, name="run.yaml"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


def test_defaults_without_a_file():
    config = load_config()
    assert config.grid.n == 8
    assert config.sweep.eps_list == [0.4, 0.2, 0.1, 0.05]
    assert config.solver.scheme == "exponential-euler"


def test_file_values_are_read(tmp_path):
    config = load_config(_write(tmp_path, "seed: 7\ngrid:\n  n: 6\n  R: 4.5\n"))
    assert config.seed == 7
    assert (config.grid.n, config.grid.R) == (6, 4.5)
    assert config.build_grid().node_count == 216


def test_unknown_keys_are_rejected(tmp_path):
    path = _write(tmp_path, "seed: 1\ngrid:\n  n: 6\n  spacing: 0.5\n")
    with pytest.raises(ConfigError) as info:
        load_config(path)
    assert info.value.line == 4


def test_yaml_syntax_errors_carry_the_line(tmp_path):
    path = _write(tmp_path, "seed: 1\ngrid:\n  n: [6\n")
    with pytest.raises(ConfigError) as info:
        load_config(path)
    assert info.value.line is not None


def test_missing_file():
    with pytest.raises(ConfigError):
        load_config("does-not-exist.yaml")


@pytest.mark.parametrize(
    "text",
    [
        "grid:\n  n: 5\n",
        "grid:\n  n: 2\n",
        "grid:\n  R: -1.0\n",
        "grid:\n  n: 20\n",
        "sweep:\n  eps_list: [0.1, 0.2]\n",
        "sweep:\n  eps_list: [1.5, 0.2]\n",
        "kernel:\n  gamma: -2.0\n  s: 0.25\n",
        "hypo:\n  mode: fixed\n  delta1: 0.01\n  delta2: 0.1\n  delta3: 0.001\n",
    ],
)
def test_invalid_values_are_rejected(tmp_path, text):
    with pytest.raises(ConfigError):
        load_config(_write(tmp_path, text))


def test_soft_potentials_with_opt_in(tmp_path):
    config = load_config(_write(tmp_path, "kernel:\n  gamma: -2.0\n  s: 0.25\n  allow_soft: true\n"))
    assert config.kernel.allow_soft


def test_environment_overrides_the_file(tmp_path, monkeypatch):
    path = _write(tmp_path, "seed: 1\nthreads: 1\n")
    monkeypatch.setenv(ENV_PREFIX + "SEED", "99")
    monkeypatch.setenv(ENV_PREFIX + "THREADS", "3")
    config = load_config(path)
    assert config.seed == 99
    assert config.threads == 3


def test_explicit_overrides_beat_the_environment(tmp_path, monkeypatch):
    path = _write(tmp_path, "seed: 1\n")
    monkeypatch.setenv(ENV_PREFIX + "SEED", "99")
    assert load_config(path, seed=5).seed == 5
    assert load_config(path, seed=None).seed == 99


def test_config_path_from_the_environment(tmp_path, monkeypatch):
    path = _write(tmp_path, "seed: 11\n", "env.yaml")
    monkeypatch.setenv(ENV_PREFIX + "CONFIG", str(path))
    assert load_config().seed == 11


def test_cache_round_trip(tmp_path):
    cache = OperatorCache(tmp_path / "cache")
    key = {"n": 4, "R": 3.0}
    assert cache.load("L", key) is None
    matrix = np.arange(6.0).reshape(2, 3)
    path = cache.store("L", key, {"matrix": matrix})
    assert path.exists()
    assert np.array_equal(cache.load("L", key)["matrix"], matrix)
    assert cache.load("L", {"n": 6, "R": 3.0}) is None


def test_cache_without_directory_is_a_no_op():
    cache = OperatorCache(None)
    assert cache.store("L", {"n": 4}, {"matrix": np.eye(2)}) is None
    assert cache.load("L", {"n": 4}) is None


def test_cache_rejects_other_versions(tmp_path):
    cache = OperatorCache(tmp_path)
    key = {"n": 4}
    path = cache.path_for("L", key)
    header = '{"version": %d, "key": {"n": 4}}' % (CACHE_VERSION + 1)
    np.savez(path, header=np.array(header), matrix=np.eye(2))
    with pytest.raises(CacheVersionError):
        cache.load("L", key)


def test_get_or_compute_computes_once(tmp_path):
    cache = OperatorCache(tmp_path)
    calls = []

    def compute():
        calls.append(1)
        return {"matrix": np.ones(3)}

    first = cache.get_or_compute("gram", {"n": 4}, compute)
    second = cache.get_or_compute("gram", {"n": 4}, compute)
    assert len(calls) == 1
    assert np.array_equal(first["matrix"], second["matrix"])


def test_model_reloads_the_cached_operator(tmp_path, grid, kernel):
    cache = OperatorCache(tmp_path)
    built = KineticModel.build(grid, kernel, cache)
    assert list(tmp_path.glob("*.npz"))
    reloaded = KineticModel.build(grid, kernel, cache)
    assert np.array_equal(built.L.matrix, reloaded.L.matrix)
    assert operator_key(grid, kernel) == operator_key(grid, kernel)
    assert operator_key(grid, kernel, symmetrized=True) != operator_key(grid, kernel)
