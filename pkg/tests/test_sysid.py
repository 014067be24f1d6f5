import numpy as np
import pytest

from dojo.sim import SimState, step
from dojo.sysid import (Dataset, SysidModel, SysidParams, Triplet, evaluate, make_synthetic_dataset, perturb_params,
                        read_dataset, sysid_fit, sysid_loss, write_dataset)
from dojo.mech import BodyConfig

TRUTH = SysidParams.box(0.3)
MODEL = SysidModel()


@pytest.fixture(scope="module")
def small_dataset():
    return make_synthetic_dataset(TRUTH, 2, seed=3, T=12)


def test_params_validation_and_vector_round_trip():
    x = TRUTH.vector()
    assert x.size == 25 and x[0] == 0.3
    back = SysidParams.from_vector(x)
    assert np.array_equal(back.vertices, TRUTH.vertices)
    with pytest.raises(ValueError):
        SysidParams(0.0, TRUTH.vertices)


def test_dataset_counts(small_dataset):
    assert len(small_dataset) == 2 * (12 - 2)
    assert {t.traj_id for t in small_dataset.triplets} == {0, 1}


def test_dataset_count_formula_for_long_tosses():
    # 50 tosses of T = 100 give 50 * 98 triplets; checked on a reduced count with the same formula
    ds = make_synthetic_dataset(TRUTH, 1, seed=0, T=100)
    assert len(ds) == 98


def test_dataset_is_seed_deterministic(small_dataset):
    again = make_synthetic_dataset(TRUTH, 2, seed=3, T=12)
    for a, b in zip(small_dataset.triplets, again.triplets):
        for xa, xb in zip(a.z_prev + a.z + a.z_next, b.z_prev + b.z + b.z_next):
            assert np.array_equal(xa.p, xb.p) and np.array_equal(xa.q, xb.q)


def test_triplets_are_consistent_with_step():
    ds = make_synthetic_dataset(TRUTH, 1, seed=5, T=10)
    mech = MODEL.mechanism(TRUTH)
    for t in ds.triplets:
        nxt, _, _ = step(mech, SimState(t.z_prev, t.z), None, MODEL.options())
        assert np.allclose(nxt.z_curr[0].p, t.z_next[0].p, atol=1e-12)


def test_dataset_file_round_trip(tmp_path, small_dataset):
    path = tmp_path / "d.csv"
    write_dataset(small_dataset, path)
    back = read_dataset(path)
    assert len(back) == len(small_dataset)
    for a, b in zip(small_dataset.triplets, back.triplets):
        assert (a.traj_id, a.step) == (b.traj_id, b.step)
        assert np.array_equal(a.z_next[0].p, b.z_next[0].p)
        assert np.allclose(a.z_next[0].q, b.z_next[0].q, atol=1e-16)


def test_loss_at_truth_is_zero(small_dataset):
    assert sysid_loss(small_dataset, TRUTH) < 1e-10


def test_loss_grows_with_wrong_friction():
    ds = make_synthetic_dataset(TRUTH, 3, seed=11, T=20)
    assert sysid_loss(ds, SysidParams(0.45, TRUTH.vertices)) > sysid_loss(ds, TRUTH)


def test_empty_dataset_has_zero_loss():
    assert sysid_loss(Dataset(), TRUTH) == 0.0


def test_weights_validated(small_dataset):
    with pytest.raises(ValueError):
        sysid_loss(small_dataset, TRUTH, W=[1.0, 2.0])


def test_jacobian_has_one_row_per_residual(small_dataset):
    params = perturb_params(TRUTH, 0.05, np.random.default_rng(0))
    res = evaluate(small_dataset, params, with_jacobian=True)
    assert res.jacobian.shape == (res.residuals.size, 25)
    assert np.all(np.isfinite(res.jacobian))


def test_fit_from_truth_takes_a_zero_step(small_dataset):
    est, trace = sysid_fit(small_dataset, TRUTH, max_gn_iters=5)
    assert trace.converged and trace.iterations == 1
    assert np.array_equal(est.vector(), TRUTH.vector())


def test_resting_pose_leaves_friction_unidentifiable():
    x = BodyConfig(np.array([0.0, 0.0, 0.1]), np.array([1.0, 0.0, 0.0, 0.0]))
    mech = MODEL.mechanism(TRUTH)
    nxt, _, _ = step(mech, SimState([x], [x]), None, MODEL.options())
    ds = Dataset([Triplet(0, 0, (x,), (x,), tuple(nxt.z_curr))])
    res = evaluate(ds, TRUTH, with_jacobian=True)
    H = res.jacobian.T @ res.jacobian
    assert H[0, 0] < 1e-8 * max(np.max(np.abs(np.diag(H))), 1e-300) + 1e-12


def test_fit_loss_is_non_increasing():
    ds = make_synthetic_dataset(TRUTH, 3, seed=2, T=20)
    theta0 = perturb_params(TRUTH, 0.1, np.random.default_rng(4))
    _, trace = sysid_fit(ds, theta0, max_gn_iters=3)
    assert all(b <= a for a, b in zip(trace.losses, trace.losses[1:]))
    assert trace.losses[-1] < trace.losses[0]


def test_fit_rejects_non_finite_start(small_dataset):
    with pytest.raises(ValueError):
        sysid_fit(small_dataset, SysidParams(0.3, np.full((8, 3), np.nan)))
