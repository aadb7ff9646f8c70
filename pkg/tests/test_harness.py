import csv
import io
from dataclasses import replace

import numpy as np
import pytest

from scfe.classifier import Classifier, Dense, make_mlp
from scfe.harness.datasets import (MissingColumnError, NonNumericError, RaggedRowError, UnknownLabelError,
                                   generate_synth2d, load_csv_dataset, load_wine, split_dataset)
from scfe.harness.experiments import (RESULT_COLUMNS, ExperimentConfig, choose_target, prepare,
                                      run_benchmark, run_robustness, run_synth_demo)
from scfe.harness.search import SearchSpace, _key, search_hyperparameters
from scfe.numerics import make_rng
from scfe.plausibility import fit_plausibility
from scfe.proximal import Box, Constraint, Penalty
from scfe.solver import SolverConfig

SMALL = SearchSpace(betas=(0.1,), taus=(1.0,), gamma_steps=4, ks=(3,))


def small_cfg(tmp_path, **kw):
    base = dict(n_test=12, synth_n_per_class=40, synth_centers=((-5.0, 0.0), (5.0, 0.0)), epochs=20,
                lr=0.01, space=SMALL, iterations=60, output_dir=str(tmp_path), target="flip")
    base.update(kw)
    return ExperimentConfig(**base)


# --- datasets --------------------------------------------------------------

def write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_csv_loader_scales_to_unit_box(tmp_path):
    t = load_csv_dataset(write(tmp_path, "a,b,label\n1,10,0\n3,20,1\n2,15,1\n"), "label")
    assert t.X.min() == 0 and t.X.max() == 1
    np.testing.assert_array_equal(t.y, [0, 1, 1])
    assert t.feature_names == ["a", "b"]


@pytest.mark.parametrize("text, err, row", [
    ("a,b,label\n1,2,0\n1,2\n", RaggedRowError, 2),
    ("a,b,label\n1,x,0\n", NonNumericError, 1),
    ("a,b,label\n1,2,0\n1,2,cat\n", UnknownLabelError, 2),
])
def test_csv_loader_row_errors(tmp_path, text, err, row):
    with pytest.raises(err) as info:
        load_csv_dataset(write(tmp_path, text), "label")
    assert info.value.row == row


def test_csv_loader_missing_column(tmp_path):
    with pytest.raises(MissingColumnError):
        load_csv_dataset(write(tmp_path, "a,b\n1,2\n"), "label")


def test_csv_loader_median_binarize(tmp_path):
    t = load_csv_dataset(write(tmp_path, "a,MEDV\n1,10\n2,20\n3,30\n4,40\n"), "MEDV", binarize="median")
    np.testing.assert_array_equal(t.y, [0, 0, 1, 1])


def test_csv_loader_label_values(tmp_path):
    t = load_csv_dataset(write(tmp_path, "a,label\n1,no\n2,yes\n"), "label", label_values=["no", "yes"])
    np.testing.assert_array_equal(t.y, [0, 1])


def test_wine_table():
    t = load_wine()
    assert (t.n, t.dim) == (178, 13)
    np.testing.assert_array_equal(np.bincount(t.y), [59, 71, 48])


def test_synth2d_sample_statistics():
    n = 500
    t = generate_synth2d(n, ((-5.0, 0.0), (5.0, 0.0)), rng=make_rng(3), train_separator=False)
    raw = t.raw
    for c, center in enumerate(([-5.0, 0.0], [5.0, 0.0])):
        mean = raw[t.y == c].mean(axis=0)
        assert np.all(np.abs(mean - center) < 3 / np.sqrt(n))


def test_synth2d_separator_trained():
    t = generate_synth2d(100, ((-5.0, 0.0), (5.0, 0.0)), rng=make_rng(4))
    assert np.mean(t.separator.predict(t.X) == t.y) > 0.99


def test_split_with_pca_lives_in_unit_box():
    train, test = split_dataset(load_wine(), 100, make_rng(0), pca_dim=8)
    assert train.dim == test.dim == 8 and (train.n, test.n) == (78, 100)
    assert train.X.min() >= 0 and train.X.max() <= 1
    assert test.X.min() >= 0 and test.X.max() <= 1
    np.testing.assert_allclose(train.transform(train.raw), train.X, atol=1e-12)


# --- target policy ---------------------------------------------------------

def test_choose_target():
    model = Classifier([Dense(np.eye(3), np.zeros(3))])
    x = np.array([0.1, 0.9, 0.5])
    assert choose_target(model, x, "runner_up") == 2
    assert choose_target(model, x, "auto") == 2
    assert choose_target(model, x, "1") is None
    assert choose_target(model, x, "0") == 0
    with pytest.raises(ValueError):
        choose_target(model, x, "flip")


# --- search ----------------------------------------------------------------

def blob_problem(seed=0):
    rng = make_rng(seed)
    X = np.vstack([rng.normal([0.25, 0.5], 0.07, (60, 2)), rng.normal([0.75, 0.5], 0.07, (60, 2))])
    y = np.repeat([0, 1], 60)
    model = Classifier([Dense(np.array([[8.0], [0.0]]), [-4.0])])
    return X.clip(0, 1), y, model


def test_search_factual_already_target_wins():
    X, y, model = blob_problem()
    x_f = np.array([0.9, 0.5])
    res = search_hyperparameters(x_f, 1, model, None, SMALL, SolverConfig(), Box.unit(2))
    assert res.theta0 == 0 and res.valid
    np.testing.assert_array_equal(res.x_cf, x_f)


def test_search_single_cell_valid():
    X, y, model = blob_problem()
    space = SearchSpace(betas=(0.1,), taus=(1.0,), ks=(3,))
    res = search_hyperparameters(np.array([0.3, 0.5]), 1, model, None, space,
                                 SolverConfig(sparsity=Constraint(1)), Box.unit(2))
    assert res.valid and res.theta0 == 1
    assert res.params["tau"] == 0.0
    assert res.params["evaluations"] == 10


def test_search_winner_dominates_cells():
    X, y, model = blob_problem(1)
    plaus = fit_plausibility("kde", X, y, model.predict(X), [0, 1], bandwidth=0.2)
    space = SearchSpace(betas=(0.01, 0.1), taus=(0.1, 1.0, 10.0), gamma_steps=6)
    template = SolverConfig(sparsity=Penalty(1, 0.1), iterations=80)
    box = Box.unit(2)
    for x_f in X[:5]:
        best = search_hyperparameters(x_f, 1, model, plaus, space, template, box)
        assert best.valid
        # each cell searched alone yields that cell's candidate
        for b in space.betas:
            for t in space.taus:
                cell = replace(space, betas=(b,), taus=(t,))
                other = search_hyperparameters(x_f, 1, model, plaus, cell, template, box)
                if other.valid:
                    assert _key(best) <= _key(other)


def test_search_nothing_valid_flags_invalid():
    model = Classifier([Dense(np.array([[1.0]]), [-5.0])])
    res = search_hyperparameters(np.array([0.5]), 1, model, None, SMALL, SolverConfig(), Box.unit(1))
    assert not res.valid


def test_search_space_validation():
    for bad in (SearchSpace(betas=()), SearchSpace(taus=(1.0, 0.1)), SearchSpace(gamma_lo=0.0),
                SearchSpace(gamma_steps=0)):
        with pytest.raises(ValueError):
            bad.validate()


# --- experiments -----------------------------------------------------------

def test_benchmark_deterministic_csv(tmp_path):
    cfg = small_cfg(tmp_path / "a", timing=False)
    report, indexed = run_benchmark(cfg)
    first = (tmp_path / "a" / "results.csv").read_bytes()
    run_benchmark(small_cfg(tmp_path / "b", timing=False))
    assert (tmp_path / "b" / "results.csv").read_bytes() == first
    assert (tmp_path / "b" / "report.csv").read_bytes() == (tmp_path / "a" / "report.csv").read_bytes()
    rows = list(csv.reader(io.StringIO(first.decode())))
    assert tuple(rows[0]) == RESULT_COLUMNS
    assert len(rows) - 1 == len(indexed) == cfg.n_test
    assert report.validity == pytest.approx(100 * np.mean([r.valid for _, r in indexed]))
    assert report.theta0_mean == 1.0 and report.theta0_std == 0.0


def test_benchmark_mlp_and_no_search(tmp_path):
    cfg = small_cfg(tmp_path, model_kind="mlp", hidden=8, search=False, gamma=10.0, plausibility="none")
    report, _ = run_benchmark(cfg, write=False)
    assert 0 <= report.validity <= 100
    assert not (tmp_path / "results.csv").exists()


def test_robustness_zero_radius_and_order(tmp_path):
    cfg = small_cfg(tmp_path, n_test=6)
    summary, detail = run_robustness(cfg, radii=[0.1, 0.0], kinds=["none", "kde"])
    assert [r for r, *_ in summary] == [0.0, 0.0, 0.1, 0.1]
    for r, kind, inp, out in summary:
        if r == 0.0:
            assert inp == 0.0 and out == 0.0
        else:
            assert inp == pytest.approx(0.1, abs=0.05)
    lines = (tmp_path / "robustness.csv").read_text().splitlines()
    assert lines[0] == "radius,plausibility,input_l2,output_l2"
    assert len(lines) == 5
    assert (tmp_path / "robustness_instances.csv").exists()


def test_robustness_rejects_unknown_kind(tmp_path):
    with pytest.raises(ValueError):
        run_robustness(small_cfg(tmp_path), kinds=["lof"], write=False)


def test_demo_trajectories(tmp_path):
    cfg = small_cfg(tmp_path, demo_instances=3, iterations=40)
    ctx = prepare(cfg)
    runs = run_synth_demo(cfg, kinds=["none", "kde"], ctx=ctx)
    for kind, res in runs.items():
        assert len(res) == 3
        for i, r in res:
            assert r.trajectory.shape == (41, 2)
            np.testing.assert_array_equal(r.trajectory[-1], r.x_cf)
            assert ctx.classifier.predict(r.trajectory[-1]) == r.target
        lines = (tmp_path / f"trajectory_{kind}.csv").read_text().splitlines()
        assert lines[0] == "instance,iter,coord0,coord1"
        assert len(lines) == 1 + 3 * 41
    w0, w1, b = map(float, (tmp_path / "boundary.csv").read_text().splitlines()[1].split(","))
    x = ctx.train.X[0]
    assert (w0 * x[0] + w1 * x[1] + b > 0) == bool(ctx.classifier.predict(x))
    assert (tmp_path / "points.csv").read_text().startswith("x,y,label\n")


def test_prepare_loads_saved_model(tmp_path):
    from scfe.classifier import save_model
    cfg = small_cfg(tmp_path)
    ctx = prepare(cfg)
    path = tmp_path / "m.txt"
    save_model(ctx.classifier, path)
    again = prepare(small_cfg(tmp_path, model_path=str(path)))
    np.testing.assert_array_equal(again.classifier.logits(ctx.test.X), ctx.classifier.logits(ctx.test.X))
    save_model(make_mlp(3, 2, make_rng(0)), path)
    with pytest.raises(ValueError):
        prepare(small_cfg(tmp_path, model_path=str(path)))
