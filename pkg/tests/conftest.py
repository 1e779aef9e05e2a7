import pytest

from concurpaas.netfabric import Fabric, FabricConfig
from concurpaas.registry import Registry
from concurpaas.simcore import Engine, SimConfig, S


class World:
    """Engine + fabric + registry wired together, without runtime or gateway."""

    def __init__(self, horizon=60 * S, seed=0, lease=30 * S, evict=10 * S, **fabric):
        self.engine = Engine(SimConfig(rng_seed=seed, horizon=horizon))
        self.fabric = Fabric(self.engine, FabricConfig(**fabric))
        self.registry = Registry(self.engine, self.fabric.is_allocated, lease, evict)
        self.fabric.registry = self.registry


@pytest.fixture
def world():
    return World


_ACCEPTANCE = {}


def pytest_runtest_logreport(report):
    if report.when == "call" and "test_acceptance" in report.nodeid:
        _ACCEPTANCE[report.nodeid.split("::")[-1]] = report.outcome
    elif report.when == "setup" and report.outcome != "passed" and "test_acceptance" in report.nodeid:
        _ACCEPTANCE[report.nodeid.split("::")[-1]] = report.outcome


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome in sorted(_ACCEPTANCE.items()):
        verdict = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"{verdict}  {name}")


def fire_doc(mode="Direct", seed=42, horizon=30 * S, drop=0.0, cooldown=10 * S,
             reprogram_interval=100_000, crossing_at=10 * S, max_instances=3):
    """Scenario document for the two-process fire application."""
    return {
        "sim": {"rng_seed": seed, "horizon_us": horizon, "trace_enabled": True},
        "fabric": {"d_hop_us": 5000, "d_proxy_us": 2000, "drop_prob": drop,
                   "rto_us": 20000, "max_attempts": 10},
        "sensors": [
            {"sensor_id": "sensor-A", "kind": "Temperature", "sample_interval_us": 1_000_000,
             "enabled": True, "trace": [[0, 25.0], [crossing_at, 55.0]]},
            {"sensor_id": "sensor-B", "kind": "Temperature", "sample_interval_us": 1_000_000,
             "enabled": True, "trace": [[0, 24.0]]},
        ],
        "bindings": [
            {"port": 8001, "sensor_id": "sensor-A", "service_name": "fire-mgr-A"},
            {"port": 8002, "sensor_id": "sensor-B", "service_name": "fire-mgr-B"},
        ],
        "app": {
            "app_id": "fire",
            "channel_mode": mode,
            "processes": [
                {"service_name": "fire-mgr-A", "behavior_id": "fire-detector", "init_params": {}},
                {"service_name": "fire-mgr-B", "behavior_id": "fire-manager", "init_params": {}},
            ],
            "scaling": {"trigger": "OnAlert", "instances_per_trigger": 1,
                        "max_instances": max_instances, "startup_delay_us": 50_000},
        },
        "fire": {"threshold_c": 50.0, "reprogram_interval_us": reprogram_interval,
                 "alert_cooldown_us": cooldown},
    }


def workload_doc(mode="Direct", seed=7, horizon=10 * S, count=10_000, interval=1000, drop=0.0):
    return {
        "sim": {"rng_seed": seed, "horizon_us": horizon, "trace_enabled": True},
        "fabric": {"d_hop_us": 5000, "d_proxy_us": 2000, "drop_prob": drop,
                   "rto_us": 20000, "max_attempts": 10},
        "sensors": [],
        "bindings": [],
        "app": {
            "app_id": "bench",
            "channel_mode": mode,
            "processes": [{"service_name": "sink", "behavior_id": "sink", "init_params": {}}],
            "scaling": {"trigger": "Manual", "instances_per_trigger": 1, "max_instances": 1,
                        "startup_delay_us": 50_000},
        },
        "workload": {"msg_count": count, "payload_bytes": 32, "interval_us": interval,
                     "target_service": "sink"},
    }


@pytest.fixture
def write_doc(tmp_path):
    import json

    def write(doc, name="scenario.json"):
        p = tmp_path / name
        p.write_text(json.dumps(doc))
        return p

    return write
