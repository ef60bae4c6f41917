from __future__ import annotations

import math
import threading

import pytest

from conftest import make_descriptor, make_plan

from exalab import drivers as dv
from exalab.config import DEFAULT_CORE_PROFILES, ServiceConfig
from exalab.errors import HandleTornDown, ProvisionFault, RangeError, WrongDriverKind
from exalab.resources import Lease, ResourceVector

# Frozen oracle values, evaluated independently with 50-digit arithmetic.
CHAN_100_30_30_1 = 100.0
CHAN_100_30_0_2 = 1993.4452517671987
CHAN_100_30_120_1 = 1.4426950401676159e-07


def make_ctx(**kwargs) -> dv.DriverContext:
    kwargs.setdefault("profiles", dict(DEFAULT_CORE_PROFILES))
    kwargs.setdefault("time_scale", 1e6)
    kwargs.setdefault("node_delay_ms", 1)
    return dv.DriverContext(**kwargs)


def lease_for(experiment_id="exp-1") -> Lease:
    from datetime import datetime, timezone

    return Lease("lease-00000001", experiment_id,
                 ResourceVector(cpu_cores=8, storage_gb=20),
                 datetime.now(timezone.utc))


def provisioned(ctx, plan=None, **plan_kwargs):
    plan = plan or make_plan(**plan_kwargs)
    descriptor = make_descriptor(plan)
    return ctx.provision(descriptor, lease_for(), core_name=plan.target_cores[0])


# -- channel model -------------------------------------------------------------


def test_channel_throughput_reference_point():
    c = dv.ChannelState(bandwidth_mhz=100, snr0_db=30, attenuation_db=30, mimo_layers=1)
    assert abs(dv.channel_throughput(c) - CHAN_100_30_30_1) < 1e-9


def test_channel_throughput_mimo_point():
    c = dv.ChannelState(bandwidth_mhz=100, snr0_db=30, attenuation_db=0, mimo_layers=2)
    assert abs(dv.channel_throughput(c) - CHAN_100_30_0_2) / CHAN_100_30_0_2 < 1e-12


def test_channel_throughput_asymptote():
    c = dv.ChannelState(bandwidth_mhz=100, snr0_db=30, attenuation_db=120, mimo_layers=1)
    value = dv.channel_throughput(c)
    assert value < 0.001
    assert abs(value - CHAN_100_30_120_1) / CHAN_100_30_120_1 < 1e-9


def test_channel_throughput_monotone_grids():
    base = dict(bandwidth_mhz=100.0, snr0_db=30.0, attenuation_db=0.0, mimo_layers=1)
    last = math.inf
    for att in range(0, 121):
        value = dv.channel_throughput(dv.ChannelState(**{**base, "attenuation_db": att}))
        assert value < last
        last = value
    last = 0.0
    for bw in (10, 20, 50, 100, 200, 400):
        value = dv.channel_throughput(dv.ChannelState(**{**base, "bandwidth_mhz": bw}))
        assert value > last
        last = value
    last = 0.0
    for layers in (1, 2, 3, 4, 8):
        value = dv.channel_throughput(dv.ChannelState(**{**base, "mimo_layers": layers}))
        assert value > last
        last = value


# -- provisioning ----------------------------------------------------------------


def test_provision_emulated_instantiates_four_roles():
    ctx = make_ctx()
    handle = provisioned(ctx)
    assert handle.driver_kind == dv.EMULATED_CORE
    assert {n.role for n in handle.topology} == {"ue", "gnb", "core", "dnn"}
    assert ctx.provision_count == 1


def test_provision_stub_modalities_fail():
    ctx = make_ctx()
    plan = make_plan(modality="emulation")
    descriptor = make_descriptor(plan)
    object.__setattr__(descriptor, "modality", "outdoors")  # force stub dispatch
    with pytest.raises(ProvisionFault) as err:
        ctx.provision(descriptor, lease_for(), core_name="Open5GS")
    assert "driver not implemented" in str(err.value)
    assert ctx.provision_count == 0


def test_provision_fault_injection_on_gnb_leaves_nothing_behind():
    ctx = make_ctx(fault_plan={"Open5GS": {"node": "gnb", "message": "crash"}})
    with pytest.raises(ProvisionFault) as err:
        provisioned(ctx)
    assert err.value.node_id == "gnb"
    assert ctx.provision_count == 0  # zero residual simulated components


def test_provision_multi_core_descriptor_needs_core_name():
    ctx = make_ctx()
    plan = make_plan(cores=("Open5GS", "Free5GC"))
    descriptor = make_descriptor(plan)
    with pytest.raises(ProvisionFault):
        ctx.provision(descriptor, lease_for())
    handle = ctx.provision(descriptor, lease_for(), core_name="Free5GC")
    assert handle.core_name == "Free5GC"


# -- measurement -----------------------------------------------------------------


def test_sample_count_law():
    ctx = make_ctx()
    handle = provisioned(ctx, duration_s=120, interval_s=1)
    trace = handle.run_measurement("tcp", 120, 1)
    assert len(trace.samples) == 120
    assert not trace.truncated
    offsets = [t for t, _ in trace.samples]
    assert offsets == list(range(1, 121))


def test_sample_count_partial_interval():
    ctx = make_ctx()
    handle = provisioned(ctx, duration_s=5, interval_s=2)
    trace = handle.run_measurement("tcp", 5, 2)
    assert [t for t, _ in trace.samples] == [2, 4, 5]


def test_seeded_determinism_across_fresh_runs():
    ctx = make_ctx()
    one = provisioned(ctx, seed=11).run_measurement("tcp", 30, 1)
    two = provisioned(ctx, seed=11).run_measurement("tcp", 30, 1)
    assert one.samples == two.samples
    other_seed = provisioned(ctx, seed=12).run_measurement("tcp", 30, 1)
    assert other_seed.samples != one.samples
    udp = provisioned(ctx, seed=11).run_measurement("udp", 30, 1)
    assert udp.samples != one.samples  # per-traffic streams


def test_zero_jitter_yields_exact_means():
    profiles = {"Open5GS": dv.CoreProfile("Open5GS", tcp_mean_mbps=60.0,
                                          udp_mean_mbps=70.0, jitter_std_mbps=0.0,
                                          provision_delay_ms=1)}
    ctx = make_ctx(profiles=profiles)
    trace = provisioned(ctx).run_measurement("tcp", 10, 1)
    assert all(v == 60.0 for _, v in trace.samples)


def test_cancel_mid_run_returns_truncated_trace():
    ctx = make_ctx()
    handle = provisioned(ctx, duration_s=50, interval_s=1)
    cancel = threading.Event()

    def stop_at_five(t_offset, _mbps):
        if t_offset >= 5:
            cancel.set()

    trace = handle.run_measurement("tcp", 50, 1, cancel=cancel, on_sample=stop_at_five)
    assert trace.truncated
    assert 5 <= len(trace.samples) < 50


def test_secondary_series_recorded():
    ctx = make_ctx()
    handle = provisioned(ctx)
    handle.run_measurement("tcp", 10, 1)
    series = handle.secondary[(handle.core_name, "tcp")]
    assert len(series["latency_ms"]) == 10
    assert len(series["cpu_pct"]) == 10
    assert all(v >= 0.1 for v in series["latency_ms"])
    assert all(0 <= v <= 100 for v in series["cpu_pct"])


# -- sim-ota ----------------------------------------------------------------------


def ota_handle(ctx, **overrides):
    plan = make_plan(cores=("Free5GC",), modality="in-lab", duration_s=30)
    cfg = ServiceConfig()
    cfg.channel.jitter_std_mbps = overrides.pop("jitter", 0.0)
    for key, value in overrides.items():
        setattr(cfg.channel, key, value)
    descriptor = make_descriptor(plan, cfg)
    return ctx.provision(descriptor, lease_for(), core_name="Free5GC")


def test_ota_zero_jitter_tracks_channel_exactly():
    ctx = make_ctx()
    handle = ota_handle(ctx)
    trace = handle.run_measurement("tcp", 10, 1)
    expected = dv.channel_throughput(handle.channel_state)
    assert all(v == expected for _, v in trace.samples)


def test_ota_attenuation_change_mid_run():
    ctx = make_ctx()
    handle = ota_handle(ctx)
    level_before = dv.channel_throughput(handle.channel_state)

    def steer(t_offset, _mbps):
        if t_offset == 5:
            handle.set_attenuation(30.0)

    trace = handle.run_measurement("tcp", 10, 1, on_sample=steer)
    values = [v for _, v in trace.samples]
    assert all(v == level_before for v in values[:5])
    assert all(abs(v - CHAN_100_30_30_1) < 1e-9 for v in values[5:])


def test_set_attenuation_rejected_on_emulated_handle():
    ctx = make_ctx()
    handle = provisioned(ctx)
    with pytest.raises(WrongDriverKind):
        handle.set_attenuation(30.0)


def test_set_attenuation_range_checked():
    ctx = make_ctx()
    handle = ota_handle(ctx)
    with pytest.raises(RangeError):
        handle.set_attenuation(130.0)
    with pytest.raises(RangeError):
        handle.set_attenuation(-1.0)
    state = handle.set_attenuation(120.0)
    assert state.attenuation_db == 120.0


# -- teardown ---------------------------------------------------------------------


def test_teardown_is_idempotent_and_blocks_measurement():
    ctx = make_ctx()
    handle = provisioned(ctx)
    handle.teardown()
    handle.teardown()
    assert ctx.teardown_count == 1
    with pytest.raises(HandleTornDown):
        handle.run_measurement("tcp", 5, 1)


def test_provisions_equal_teardowns_at_end():
    ctx = make_ctx()
    handles = [provisioned(ctx, seed=i) for i in range(4)]
    for handle in handles:
        handle.teardown()
    assert ctx.provision_count == ctx.teardown_count == 4
