import dataclasses

import pytest

from abacus_sim import metrics
from abacus_sim.hardware import MB, HardwareParams
from abacus_sim.report import KernelRecord, SimulationReport
from abacus_sim.simcore import BASELINE, FLASHABACUS, run
from abacus_sim.workload import build_mix, preset_mix

SEC = 1e9
QUIET = dict(ddr3l_power=0.0, pcie_power=0.0, ssd_power=0.0, idle_fraction=0.0)


def _report(busy, makespan, kernels=None, mix="m", **param_overrides):
    params = dataclasses.replace(HardwareParams(), **param_overrides)
    kernels = kernels if kernels is not None else [KernelRecord(0, 0, 0, "k", 0.0, 0.0, 0.0, makespan, 640 * MB, 0)]
    horizon = max([makespan] + [e for ivs in busy.values() for _, e in ivs])
    return SimulationReport(mix, "interdy", FLASHABACUS, params.as_dict(), kernels, busy, makespan, horizon,
                            counters={"management_lwps": []})


@pytest.fixture(scope="module")
def gemm():
    return run(preset_mix("GEMM"), "interdy", HardwareParams(), FLASHABACUS)


def test_throughput_arithmetic():
    r = _report({"lwp2": [(0.0, 64 * SEC)]}, 64 * SEC)
    assert metrics.throughput(r) == pytest.approx(10 * MB)


def test_throughput_of_empty_report():
    with pytest.raises(metrics.MetricsError):
        metrics.throughput(_report({}, 0.0, kernels=[]))


def test_single_worker_energy():
    r = _report({"lwp2": [(0.0, 10 * SEC)]}, 10 * SEC, **QUIET)
    e = metrics.energy(r)
    assert e.computation == pytest.approx(8.0)
    assert e.data_movement == 0.0 and e.storage_access == 0.0
    assert e.total == pytest.approx(8.0)


def test_zero_duration_energy_and_series():
    r = _report({}, 0.0, kernels=[])
    assert metrics.energy(r).total == 0.0
    assert metrics.power_timeseries(r, 1e6) == []


def test_idle_power_counts_outside_busy_time():
    r = _report({"lwp2": [(0.0, 5 * SEC)]}, 10 * SEC, **dict(QUIET, idle_fraction=0.1))
    assert metrics.energy(r).computation == pytest.approx(0.8 * 5 + 0.08 * 5)


def test_flat_series_for_constant_load():
    r = _report({"lwp2": [(0.0, 4 * SEC)]}, 4 * SEC, **QUIET)
    series = metrics.power_timeseries(r, SEC)
    assert [t for t, _ in series] == [0.0, SEC, 2 * SEC, 3 * SEC]
    assert all(w == pytest.approx(0.8) for _, w in series)


def test_series_shows_storage_then_compute_phase():
    busy = {f"way{w}": [(0.0, 5 * SEC)] for w in range(8)}
    busy["lwp2"] = [(5 * SEC, 10 * SEC)]
    r = _report(busy, 10 * SEC, **dict(QUIET, ssd_power=11.0))
    series = metrics.power_timeseries(r, 5 * SEC)
    assert series[0][1] == pytest.approx(11.0)
    assert series[1][1] == pytest.approx(0.8)


def test_bad_bin_width():
    with pytest.raises(metrics.MetricsError):
        metrics.power_timeseries(_report({}, 1.0), 0)


@pytest.mark.parametrize("bin_ns", [1e6, 7.3e6, 1e8, 3e9])
def test_energy_equals_series_integral(gemm, bin_ns):
    series = metrics.power_timeseries(gemm, bin_ns)
    integral = sum(w * bin_ns for _, w in series) * 1e-9
    assert integral == pytest.approx(metrics.energy(gemm).total, rel=1e-9)


def test_single_kernel_latency():
    r = _report({"lwp2": [(0.0, 3.0)]}, 3.0)
    s = metrics.latency_stats(r)
    assert s.min == s.mean == s.max == 3.0
    assert s.cdf == [(3.0, 1.0)]


def test_identical_kernels_finish_together(gemm):
    s = metrics.latency_stats(gemm)
    assert (s.max - s.min) / s.mean < 0.02
    assert len(s.cdf) == 6 and s.cdf[-1][1] == 1.0


def test_utilization_bounds(gemm):
    u = metrics.utilization(gemm)
    assert all(0.0 <= v <= 1.0 for v in u.per_lwp.values())
    assert len(gemm.workers) == 6
    assert u.mean_worker > 0.9


def test_management_lwps_draw_power_in_integrated_mode(gemm):
    for c in gemm.management:
        assert gemm.busy_time(c) == pytest.approx(gemm.horizon)


def test_out_of_order_has_lower_worst_latency_on_a_mix():
    mix = build_mix(2, 1)
    st = metrics.latency_stats(run(mix, "interst", HardwareParams(), FLASHABACUS))
    o3 = metrics.latency_stats(run(mix, "intrao3", HardwareParams(), FLASHABACUS))
    assert o3.max < st.max


def test_compare_identity_and_mismatch(gemm):
    rows = metrics.compare({"a": gemm, "b": gemm}, "a")
    assert all((r.throughput_ratio, r.mean_latency_ratio, r.energy_ratio) == (1.0, 1.0, 1.0) for r in rows)
    other = dataclasses.replace(gemm, mix="other")
    with pytest.raises(metrics.MetricsError):
        metrics.compare({"a": gemm, "b": other}, "a")
    with pytest.raises(metrics.MetricsError):
        metrics.compare({"a": gemm, "b": gemm}, "c")


def _scaled(r, f):
    kernels = [dataclasses.replace(k, arrival=k.arrival * f, ready=k.ready * f, start=k.start * f, end=k.end * f)
               for k in r.kernels]
    busy = {c: [(s * f, e * f) for s, e in ivs] for c, ivs in r.busy.items()}
    return dataclasses.replace(r, kernels=kernels, busy=busy, makespan=r.makespan * f, horizon=r.horizon * f)


def test_normalized_throughput_is_time_scale_invariant(gemm):
    other = run(preset_mix("GEMM"), "interst", HardwareParams(), FLASHABACUS)
    base = metrics.compare({"dy": gemm, "st": other}, "st")
    scaled = metrics.compare({"dy": _scaled(gemm, 3.0), "st": _scaled(other, 3.0)}, "st")
    assert base[0].throughput_ratio == pytest.approx(scaled[0].throughput_ratio, rel=1e-12)


def test_baseline_energy_is_dominated_by_data_movement():
    r = run(preset_mix("2DCON", instances=2), "simd", HardwareParams(), BASELINE)
    assert metrics.energy(r).data_movement_fraction >= 0.6
    assert 0.0 < metrics.transfer_fraction(r) <= 1.0


def test_csv_exports(gemm):
    cdf = metrics.cdf_csv(gemm).splitlines()
    assert cdf[0] == "latency_ns,fraction" and len(cdf) == 7
    ts = metrics.timeseries_csv(metrics.power_timeseries(gemm, 1e9)).splitlines()
    assert ts[0] == "bin_start_ns,watts"
