import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pisal import autodiff as ad
from pisal import sal
from pisal.checks import check_loss_routes
from pisal.errors import ConfigurationError, PartitionDegenerateError, TrainingError
from pisal.jet import function_field, jnp
from pisal.network import flatten, init_xavier, unflatten
from pisal.physics import STEFAN, STOKES
from pisal.physics.base import BAND, REGION1, REGION2, RegionTag, SamplePoint
from pisal.physics.dataset import Dataset, label, sample_dataset
from pisal.sal import (
    PinnModel, PisalModel, TrainConfig, TrainLogRecord, classify, classify_array, load_bundle,
    loss_terms, loss_terms_fields, loss_terms_on_tape, partition, pinn_baseline_train, read_log_csv,
    sal_train, save_bundle, write_log_csv,
)

TINY = dict(
    n_u=40, n_f=60, n_initial=4, k_max=2, lbfgs_interface_iters=5, lbfgs_field_iters=10,
    pretrain_iters=10, adam_warmup=10, net1_hidden=(5,), net2_hidden=(5,), netI_hidden=(3,),
)


def front(t):
    return np.asarray(t) + 0.5


def flat(x):
    return np.zeros_like(np.asarray(x))


def exact_fields(problem):
    return (problem.exact_field(REGION1), problem.exact_field(REGION2), problem.exact_interface_field())


# -------------------------------------------------------------- classify


def test_classify_examples():
    assert classify(front, SamplePoint((0.2,), 0.3), 0.02, STEFAN) == RegionTag.REGION1
    assert classify(front, SamplePoint((0.8,), 0.3), 0.02, STEFAN) == RegionTag.INTERFACE_BAND
    assert classify(front, SamplePoint((1.5,), 0.3), 0.02, STEFAN) == RegionTag.REGION2
    assert classify(flat, SamplePoint((0.5, -0.5)), 0.04, STOKES) == RegionTag.REGION2
    assert classify(flat, SamplePoint((0.5, 0.5)), 0.04, STOKES) == RegionTag.REGION1


def test_band_edge_is_inclusive():
    # 0.25 and 0.5 are exact in binary, so the distance is exactly the band width
    codes = classify_array(STOKES, flat, np.array([[0.5, 0.25], [0.5, -0.25], [0.5, 0.2500001]]), 0.25)
    assert list(codes) == [BAND, BAND, REGION1]


def test_classify_with_interface_network():
    netI = unflatten([1, 2, 1], np.zeros(7))
    # a zero network puts the Stefan front at the offset
    assert classify(netI, SamplePoint((STEFAN.interface_offset,), 0.4), 1e-9, STEFAN) == RegionTag.INTERFACE_BAND


# ------------------------------------------------------------- partition


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 1000), st.floats(1e-3, 1.5))
def test_partition_invariants(seed, eps):
    D, E = sample_dataset(STEFAN, 60, 80, 5, seed=seed)
    part = partition(front, D, E, eps, STEFAN)
    for a, b, i, n, pts in ((part.d1, part.d2, part.di, len(D), D.Z), (part.e1, part.e2, part.ei, len(E), E)):
        assert set(a) | set(b) == set(range(n))
        assert set(a) & set(b) == set(i)
        assert np.all(classify_array(STEFAN, front, pts[i], eps) == BAND)


def test_partition_counts_on_true_front():
    D, E = sample_dataset(STEFAN, 220, 2000, 20, seed=0)
    part = partition(front, D, E, 0.02, STEFAN)
    assert len(part.d1) + len(part.d2) - len(part.di) == 220


def test_wide_band_swallows_everything():
    D, E = sample_dataset(STOKES, 50, 50, seed=1)
    part = partition(flat, D, E, 5.0, STOKES)
    assert len(part.di) == len(D) and len(part.ei) == len(E)


def test_vanishing_band_is_degenerate():
    D, E = sample_dataset(STOKES, 50, 50, seed=1)
    assert partition(flat, D, E, 1e-14, STOKES).degenerate


# ---------------------------------------------------------------- losses


def on_interface(problem, n, seed):
    rng = np.random.default_rng(seed)
    lo, hi = problem.bounds[problem.interface_input_axis]
    S = rng.uniform(lo, hi, n)
    Z = np.zeros((n, problem.n_in))
    Z[:, problem.interface_input_axis] = S
    Z[:, problem.normal_axis] = problem.true_interface(S)
    return Z


@pytest.mark.parametrize("problem,interface", [(STEFAN, front), (STOKES, flat)])
def test_exact_solutions_give_zero_loss(problem, interface):
    D, E = sample_dataset(problem, 200, 300, 10 if problem.time_dependent else 0, seed=2)
    D = label(problem, np.vstack([D.Z, on_interface(problem, 10, 0)]))
    E = np.vstack([E, on_interface(problem, 10, 1)])
    # a band this thin holds only the points placed on the interface
    part = partition(interface, D, E, 1e-12, problem)
    assert len(part.di) == 10 and len(part.ei) == 10
    terms = loss_terms_fields(problem, exact_fields(problem), (None, None, None), problem.lambda_true, part)
    jump = 0.0
    if problem is STOKES:
        # interface measurements carry the medium-1 label; medium 2 slips by x^2 (x-1)^2
        x = D.Z[part.di, 0]
        jump = np.sum((x**2 * (x - 1) ** 2) ** 2) / len(part.d2)
        assert terms.pop("mse_dm_u2") == pytest.approx(jump, rel=1e-12)
    assert max(terms.values()) <= 1e-12


def test_shared_band_data_sees_the_other_medium():
    # across the front the two Stefan closed forms agree to first order, so the
    # off-side band data cost only O(eps^4); Stokes velocities jump across the interface
    for problem, interface, bound in ((STEFAN, front, 1e-8), (STOKES, flat, None)):
        D, E = sample_dataset(problem, 400, 300, 10 if problem.time_dependent else 0, seed=2)
        part = partition(interface, D, E, problem.default_eps, problem, band_data="both")
        terms = loss_terms_fields(problem, exact_fields(problem), (None,) * 3, problem.lambda_true, part)
        if bound is None:
            assert terms["mse_dm_u1"] > 1e-6
        else:
            assert 0 < terms["mse_dm_u1"] <= bound
        assert terms["mse_dm_i"] <= 1e-12


@pytest.mark.parametrize("problem,interface", [(STEFAN, front), (STOKES, flat)])
def test_own_side_band_data_leaves_exact_fields_at_zero(problem, interface):
    D, E = sample_dataset(problem, 400, 300, 10 if problem.time_dependent else 0, seed=2)
    part = partition(interface, D, E, problem.default_eps, problem)
    assert len(part.di) > 0
    assert set(part.fit1) <= set(part.d1) and set(part.fit2) <= set(part.d2)
    assert set(part.fit1) | set(part.fit2) == set(range(len(D)))
    terms = loss_terms_fields(problem, exact_fields(problem), (None,) * 3, problem.lambda_true, part)
    assert max(terms.values()) <= 1e-12


def test_band_data_option_is_checked():
    D, E = sample_dataset(STEFAN, 20, 20, 2, seed=0)
    with pytest.raises(ConfigurationError):
        partition(front, D, E, 0.1, STEFAN, band_data="sometimes")
    with pytest.raises(ConfigurationError):
        TrainConfig(band_data="sometimes").validate()


def test_zero_field_data_term_is_mean_square():
    D, E = sample_dataset(STEFAN, 100, 100, 10, seed=3)
    part = partition(front, D, E, 0.1, STEFAN)
    zero = function_field(lambda z: jnp.zeros(1) * z[0], 2)
    terms = loss_terms_fields(STEFAN, (zero, zero, STEFAN.exact_interface_field()), (None,) * 3, (2.0, 1.0), part)
    assert terms["mse_dm_u1"] == pytest.approx(np.mean(D.U[part.fit1, 0] ** 2), rel=1e-13)


def test_one_point_sets_give_squared_residual():
    D = label(STEFAN, np.array([[0.3, 0.2], [0.7, 0.2], [1.6, 0.2]]))
    E = np.array([[0.3, 0.5], [1.0, 0.5], [1.8, 0.5]])
    part = partition(front, D, E, 0.02, STEFAN)
    assert part.sizes == (2, 2, 1, 2, 2, 1)
    fields_ = exact_fields(STEFAN)
    terms = loss_terms_fields(STEFAN, fields_, (None,) * 3, (2.0, 1.0), part)
    # the band measurement sits on the front, where the exact interface value is u* = 0
    assert terms["mse_dm_i"] <= 1e-24
    one = partition(front, label(STEFAN, D.Z[:1]), E[:1], 0.02, STEFAN)
    with pytest.raises(PartitionDegenerateError):
        loss_terms_fields(STEFAN, fields_, (None,) * 3, (2.0, 1.0), one)


def test_wrong_coefficient_shows_in_physics_term_only():
    D, E = sample_dataset(STEFAN, 100, 200, 10, seed=4)
    part = partition(front, D, E, 0.02, STEFAN)
    terms = loss_terms_fields(STEFAN, exact_fields(STEFAN), (None,) * 3, (2.0, 2.0), part)
    assert terms["mse_pm_u2"] > 1e-2
    assert terms["mse_pm_u1"] <= 1e-12


def test_batched_and_tape_losses_agree():
    res = check_loss_routes()
    assert res.passed, res.line()


def test_field_balance_equalizes_mean_squares():
    U = np.array([[0.01, 1.0], [-0.03, 2.0], [0.02, -1.0]])
    w = sal.field_balance(U)
    ms = np.mean(U**2, axis=0)
    np.testing.assert_allclose(w * ms, np.full(2, ms.mean()), rtol=1e-14)
    assert np.sum(w * ms) == pytest.approx(np.sum(ms), rel=1e-14)
    np.testing.assert_array_equal(sal.field_balance(np.zeros((3, 2))), [1.0, 1.0])


def test_balanced_data_term_weights_each_field():
    D, E = sample_dataset(STOKES, 200, 100, seed=6)
    part = partition(flat, D, E, STOKES.default_eps, STOKES, balance="fields")
    zero = function_field(lambda z: jnp.zeros(3) * z[0], 2)
    terms = loss_terms_fields(STOKES, (zero, zero, STOKES.exact_interface_field()), (None,) * 3,
                              STOKES.lambda_true, part)
    U1 = D.U[part.fit1]
    # with zero predictions every field contributes the same share
    assert terms["mse_dm_u1"] == pytest.approx(np.sum(np.mean(U1**2, axis=0)), rel=1e-12)
    assert np.ptp(part.balance1 * np.mean(U1**2, axis=0)) <= 1e-14
    with pytest.raises(ConfigurationError):
        partition(flat, D, E, 0.1, STOKES, balance="all")


@pytest.mark.parametrize("problem", [STEFAN, STOKES])
def test_balanced_routes_agree(problem):
    D, E = sample_dataset(problem, 10, 10, 2 if problem.time_dependent else 0, seed=7)
    model = small_model(problem, 3)
    part = partition(model.netI, D, E, 0.6 * problem.normal_extent, problem, balance="fields")
    batched = loss_terms(model, problem, part)
    _, on_tape, _ = loss_terms_on_tape(model, problem, part)
    for k, v in batched.items():
        assert on_tape[k].value == pytest.approx(v, rel=1e-10), k


def small_model(problem, seed):
    nets = [init_xavier([problem.n_in, 5, problem.n_fields], seed + i) for i in range(2)]
    return PisalModel(nets[0], nets[1], init_xavier([1, 5, 1], seed + 2), 1.3, 0.7)


@pytest.mark.parametrize("problem", [STEFAN, STOKES])
def test_end_to_end_gradient_matches_fd(problem):
    D, E = sample_dataset(problem, 8, 8, 2 if problem.time_dependent else 0, seed=5)
    model = small_model(problem, 11)
    part = partition(model.netI, D, E, 0.6 * problem.normal_extent, problem)
    assert not part.degenerate
    tape, terms, leaves = loss_terms_on_tape(model, problem, part)
    total = tape.sum(list(terms.values()))
    names = ("net1", "net2", "netI", "lambda1", "lambda2")
    grads = {k: ad.gradient(tape, total, leaves[k]) for k in names}

    def mse_m(vectors):
        m = PisalModel(*(unflatten(getattr(model, k).layer_sizes, vectors[k]) for k in names[:3]),
                       float(vectors["lambda1"][0]), float(vectors["lambda2"][0]))
        return sum(loss_terms(m, problem, part).values())

    base = {k: flatten(getattr(model, k)) for k in names[:3]}
    base["lambda1"], base["lambda2"] = np.array([model.lambda1]), np.array([model.lambda2])
    h = 1e-5
    worst = 0.0
    for k in names:
        for i in range(base[k].size):
            up = {n: v.copy() for n, v in base.items()}
            down = {n: v.copy() for n, v in base.items()}
            up[k][i] += h
            down[k][i] -= h
            fd = (mse_m(up) - mse_m(down)) / (2 * h)
            worst = max(worst, abs(grads[k][i] - fd) / max(1e-3, abs(fd)))
    assert worst <= 1e-4


def test_log_record_total_is_sum_of_terms(tmp_path):
    rec = TrainLogRecord(3, 1e-3, 2e-4, 3e-5, 4e-6, 5e-7, 6e-8, 1.9, 1.1, 1, 2, 3, 4, 5, 6)
    assert rec.mse_m == pytest.approx(1e-3 + 2e-4 + 3e-5 + 4e-6 + 5e-7 + 6e-8, abs=1e-12)
    write_log_csv(tmp_path / "log.csv", [rec])
    assert read_log_csv(tmp_path / "log.csv") == [rec]
    header = (tmp_path / "log.csv").read_text().splitlines()[0]
    assert header == ("k,mse_dm_u1,mse_dm_u2,mse_dm_i,mse_pm_u1,mse_pm_u2,mse_pm_i,"
                      "lambda1,lambda2,n_d1,n_d2,n_di,n_e1,n_e2,n_ei,seconds")


# ---------------------------------------------------------------- config


@pytest.mark.parametrize("bad", [
    dict(k_max=0), dict(delta_train=0.0), dict(eps_interface=-1.0), dict(n_initial=500),
    dict(lambda_update="sgd"), dict(lbfgs_field_iters=0), dict(net1_hidden=(0,)),
])
def test_config_validation(bad):
    with pytest.raises(ConfigurationError):
        TrainConfig(**bad).validate()


def test_config_json_roundtrip():
    cfg = TrainConfig.for_problem(STOKES, net1_hidden=(7, 7), eps_interface=0.1)
    assert TrainConfig.from_json(cfg.to_json()) == cfg
    assert TrainConfig.from_json({"net1_hidden": 8}).net1_hidden == (8,)
    with pytest.raises(ConfigurationError):
        TrainConfig.from_json({"learning_rate": 1.0})


def test_layer_sizes_defaults():
    assert TrainConfig().layer_sizes(STEFAN) == {"net1": [2, 100, 1], "net2": [2, 100, 1], "netI": [1, 100, 1]}
    assert TrainConfig().layer_sizes(STOKES)["net1"] == [2, 90, 90, 3]


# -------------------------------------------------------------- training


@pytest.fixture(scope="module")
def tiny_run():
    return sal_train(STEFAN, TrainConfig(**TINY))


def test_training_logs_every_outer_step(tiny_run):
    log = tiny_run.log
    assert [r.k for r in log] == list(range(len(log)))
    assert 1 <= len(log) <= TINY["k_max"] + 1
    assert all(math.isfinite(r.mse_m) for r in log)
    assert log[-1].lambda1 == tiny_run.model.lambda1


def test_partition_consistency_after_training(tiny_run):
    model, D, E = tiny_run.model, tiny_run.D, tiny_run.E
    eps = STEFAN.default_eps
    part = partition(model.netI, D, E, eps, STEFAN)
    assert np.all(classify_array(STEFAN, model.netI, D.Z[part.di], eps) == BAND)
    assert part.sizes == tuple(getattr(tiny_run.log[-1], f) for f in ("n_d1", "n_d2", "n_di", "n_e1", "n_e2", "n_ei"))


def test_training_is_deterministic(tiny_run):
    again = sal_train(STEFAN, TrainConfig(**TINY))
    assert [r.row() for r in again.log] == [r.row() for r in tiny_run.log]
    assert flatten(again.model.net1).tobytes() == flatten(tiny_run.model.net1).tobytes()


def test_infinite_threshold_stops_at_initial_record():
    res = sal_train(STEFAN, TrainConfig(**{**TINY, "delta_train": math.inf}))
    assert [r.k for r in res.log] == [0]


def test_threshold_already_met_leaves_model_unchanged(tiny_run):
    start = tiny_run.model
    cfg = TrainConfig(**{**TINY, "delta_train": 10 * tiny_run.log[-1].mse_m + 1.0})
    res = sal_train(STEFAN, cfg, init=start, data=(tiny_run.D, tiny_run.E))
    assert len(res.log) == 1
    assert (res.model.lambda1, res.model.lambda2) == (start.lambda1, start.lambda2)
    assert flatten(res.model.net2).tobytes() == flatten(start.net2).tobytes()


def test_empty_band_raises_after_resampling():
    cfg = TrainConfig(**{**TINY, "eps_interface": 1e-15, "max_resample": 3})
    with pytest.raises(TrainingError) as info:
        sal_train(STEFAN, cfg)
    assert "3 resamples" in str(info.value)
    assert info.value.model is not None


def test_block_update_rejected_when_not_better(monkeypatch):
    # an optimizer that claims a better loss but returns a worse point
    from pisal.optim import LbfgsResult

    def liar(fg, x0, state=None, callback=None):
        x = np.asarray(x0) + 10.0
        return LbfgsResult(x, -1.0, 1, "converged", fg(x)[1], 1)

    D, E = sample_dataset(STEFAN, 40, 60, 4, seed=0)
    cfg = TrainConfig(**TINY)
    model = sal.init_model(STEFAN, cfg)
    part = partition(model.netI, D, E, cfg.eps(STEFAN), STEFAN)
    engine = sal._engine_for(STEFAN, model)
    obj = sal._medium_objective(engine, REGION1, engine.medium_batch(part, REGION1))
    th = flatten(model.net1)
    start = obj.loss(th, 1.0)
    monkeypatch.setattr(sal, "lbfgs_minimize", liar)
    for mode in ("joint", "adam"):
        c = TrainConfig(**{**TINY, "lambda_update": mode, "rounds": 2})
        th2, lam2, _ = sal._fit_medium(obj, c, th, 1.0, sal.AdamState.fresh(1), RuntimeError)
        assert obj.loss(th2, lam2) <= start


def test_block_update_never_increases_loss():
    D, E = sample_dataset(STOKES, 40, 60, seed=0)
    cfg = TrainConfig(**{**TINY, "n_initial": 0})
    model = sal.init_model(STOKES, cfg)
    part = partition(model.netI, D, E, 1.0, STOKES)
    engine = sal._engine_for(STOKES, model)
    for region in (REGION1, REGION2):
        obj = sal._medium_objective(engine, region, engine.medium_batch(part, region))
        th = flatten(model.net1 if region == REGION1 else model.net2)
        for mode in ("joint", "adam"):
            c = TrainConfig(**{**TINY, "lambda_update": mode, "rounds": 2})
            th2, lam2, _ = sal._fit_medium(obj, c, th, 1.0, sal.AdamState.fresh(1), RuntimeError)
            assert obj.loss(th2, lam2) <= obj.loss(th, 1.0)


def test_bundle_roundtrip(tmp_path, tiny_run):
    path = tmp_path / "bundle.json"
    save_bundle(path, tiny_run.model, TrainConfig(**TINY), tiny_run.rngs)
    model, cfg, rngs = load_bundle(path)
    assert cfg == TrainConfig(**TINY)
    assert flatten(model.netI).tobytes() == flatten(tiny_run.model.netI).tobytes()
    assert model.lambda2 == tiny_run.model.lambda2
    assert set(rngs) == {"sample/D", "sample/E"}


def test_model_predict_uses_own_interface(tiny_run):
    model = tiny_run.model
    Z = np.array([[0.05, 0.5], [1.95, 0.5]])
    out = model.predict(STEFAN, Z)
    np.testing.assert_array_equal(out[0], model.net1(Z[:1])[0])
    np.testing.assert_array_equal(out[1], model.net2(Z[1:])[0])


def test_baseline_uses_one_coefficient():
    res = pinn_baseline_train(STEFAN, TrainConfig(**TINY))
    assert isinstance(res.model, PinnModel)
    assert all(r.lambda1 == r.lambda2 for r in res.log)
    assert res.log[-1].lambda1 == res.model.lam
    assert res.model.predict(STEFAN, np.array([[0.5, 0.5]])).shape == (1, 1)
