"""Plant models, schedules, offline experiment generation, and the cost oracle."""
import numpy as np
import pytest

from ddlmi import (
    BenchmarkPlant,
    CostWeights,
    DeltaSchedule,
    PlantError,
    PlantModel,
    benchmark_vertices,
    delta_to_weights,
    generate_offline_data,
    step_of_time,
    step_plant,
    true_cost,
    vertex_system,
)
from oracles import benchmark_a, benchmark_b


def test_vertex_matrices():
    v = vertex_system(0.15)
    np.testing.assert_array_equal(v.a, [[1.0, 0.1], [0.0, 0.985]])
    np.testing.assert_array_equal(v.b, [[0.0], [0.787]])
    lo, hi = benchmark_vertices()
    np.testing.assert_array_equal(lo.a, benchmark_a(0.1))
    np.testing.assert_array_equal(hi.a, benchmark_a(10.0))
    np.testing.assert_array_equal(lo.b, benchmark_b())


def test_step_of_time():
    # 0.1 s sampling: the 1.5 s parameter change lands on step 15
    assert step_of_time(1.5) == 15
    assert step_of_time(0.0) == 0
    assert step_of_time(5.0) == 50


def test_schedule_lookup():
    sched = DeltaSchedule(((0, 0.15), (15, 0.30)))
    assert sched.value(0) == 0.15
    assert sched.value(14) == 0.15
    assert sched.value(15) == 0.30
    assert sched.value(100) == 0.30
    assert DeltaSchedule.constant(0.5).value(7) == 0.5


def test_schedule_validation():
    with pytest.raises(PlantError, match="at least one"):
        DeltaSchedule(())
    with pytest.raises(PlantError, match="step 0"):
        DeltaSchedule(((3, 0.1),))
    with pytest.raises(PlantError, match="strictly increasing"):
        DeltaSchedule(((0, 0.1), (5, 0.2), (5, 0.3)))


def test_benchmark_plant_step_matches_matrices():
    plant = BenchmarkPlant(7.87, DeltaSchedule(((0, 0.15), (2, 0.30))), [0.95, 0.0])
    x1 = step_plant(plant, [0.5])
    np.testing.assert_allclose(x1, benchmark_a(0.15) @ [0.95, 0.0] + benchmark_b() @ [0.5])
    x2 = step_plant(plant, [0.0])
    np.testing.assert_allclose(x2, benchmark_a(0.15) @ x1)
    # from step 2 the schedule switches the friction coefficient
    x3 = step_plant(plant, [0.0])
    np.testing.assert_allclose(x3, benchmark_a(0.30) @ x2)


def test_delta_to_weights():
    lam, ok = delta_to_weights(0.15)
    assert ok
    assert lam.sum() == pytest.approx(1.0, abs=1e-12)
    recon = lam[0] * benchmark_a(0.1) + lam[1] * benchmark_a(10.0)
    np.testing.assert_allclose(recon, benchmark_a(0.15), atol=1e-12)
    # vertices land exactly on the corners
    np.testing.assert_allclose(delta_to_weights(0.1)[0], [1.0, 0.0], atol=1e-15)
    # the sweep grid's delta = 0 sits outside the declared range
    lam0, ok0 = delta_to_weights(0.0)
    assert not ok0
    assert lam0[0] > 1.0


def test_plant_model_mixer_validation():
    verts = benchmark_vertices()
    good = PlantModel(verts, lambda k: delta_to_weights(0.15)[0], [1.0, 0.0])
    step_plant(good, [0.0])
    bad = PlantModel(verts, lambda k: np.array([0.7, 0.7]), [1.0, 0.0])
    with pytest.raises(PlantError, match="not convex"):
        step_plant(bad, [0.0])
    wrong_len = PlantModel(verts, lambda k: np.array([1.0]), [1.0, 0.0])
    with pytest.raises(PlantError, match="weights for"):
        step_plant(wrong_len, [0.0])


def test_plant_model_matches_direct_plant():
    # a hull mixture at constant delta must reproduce BenchmarkPlant exactly
    verts = benchmark_vertices()
    mixed = PlantModel(verts, lambda k: delta_to_weights(0.6)[0], [0.95, 0.0])
    direct = BenchmarkPlant(7.87, DeltaSchedule.constant(0.6), [0.95, 0.0])
    for u in ([0.3], [-0.2], [0.05]):
        np.testing.assert_allclose(step_plant(mixed, u), step_plant(direct, u), atol=1e-14)


def test_generate_offline_data_reproducible():
    vert = vertex_system(0.1)
    d1 = generate_offline_data(vert, 4, [0.95, 0.0], (-1.0, 1.0), np.random.default_rng(9))
    d2 = generate_offline_data(vert, 4, [0.95, 0.0], (-1.0, 1.0), np.random.default_rng(9))
    np.testing.assert_array_equal(d1.u_minus, d2.u_minus)
    np.testing.assert_array_equal(d1.x_plus, d2.x_plus)
    assert d1.samples == 4
    assert float(np.max(np.abs(d1.u_minus))) <= 1.0
    # successor columns actually follow the vertex dynamics
    np.testing.assert_allclose(
        d1.x_plus, vert.a @ d1.x_minus + vert.b @ d1.u_minus, atol=1e-14
    )
    # consecutive samples chain: x+ of column j is x- of column j+1
    np.testing.assert_array_equal(d1.x_plus[:, :-1], d1.x_minus[:, 1:])


def test_generate_offline_data_validates_length():
    with pytest.raises(PlantError):
        generate_offline_data(vertex_system(0.1), 0, [0.0, 0.0])


def test_true_cost_single_step():
    w = CostWeights.from_qr(np.eye(2), [[0.01]])
    traj = [([1.0, 0.0], [1.0])]
    # x'Qx + u'Ru = 1 + 0.01
    assert true_cost(traj, w, 0) == pytest.approx(1.01, abs=1e-15)


def test_true_cost_requires_enough_samples():
    w = CostWeights.from_qr(np.eye(2), [[0.01]])
    with pytest.raises(PlantError, match="need 3"):
        true_cost([([0.0, 0.0], [0.0])], w, 2)
