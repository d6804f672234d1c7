"""Test cases for the CNN families and the classifier interface"""

import numpy as np
import pytest
import torch

from eegshield.classical import fit_csp_lr
from eegshield.classifiers import (
    ModelSpec,
    build_model,
    check_gradients,
    check_labels,
    freeze,
    labels_from_proba,
    load_checkpoint,
    predict,
    predict_proba,
    save_checkpoint,
    train_classifier,
)
from eegshield.error_handler import FileSystemError, ModelError
from eegshield.models import EEGNet, build_network


def _power_task(n=48, c=4, t=64, seed=0):
    """Class 2 carries a strong 10 Hz rhythm, class 1 is noise."""
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, c, t))
    y = np.arange(n) % 2 + 1
    rhythm = 3.0 * np.sin(2 * np.pi * 10.0 * np.arange(t) / 128.0)
    x[y == 2] += rhythm
    return x.astype(np.float32), y


@pytest.mark.parametrize("arch,shape", [("EEGNet", (4, 64)), ("DeepCNN", (4, 128)), ("ShallowCNN", (4, 64))])
def test_forward_shapes(arch, shape):
    network = build_network(arch, shape, 3)
    network.eval()
    out = network(torch.zeros(5, *shape))
    assert out.shape == (5, 3)


@pytest.mark.parametrize("arch,shape", [("EEGNet", (4, 16)), ("DeepCNN", (4, 64)), ("ShallowCNN", (4, 32))])
def test_input_below_receptive_field(arch, shape):
    with pytest.raises(ModelError, match="receptive field"):
        build_network(arch, shape, 2)


def test_build_network_is_seeded():
    a = build_network("EEGNet", (4, 64), 2, seed=1)
    b = build_network("EEGNet", (4, 64), 2, seed=1)
    for pa, pb in zip(a.parameters(), b.parameters()):
        assert torch.equal(pa, pb)


def test_build_network_rejects_unknown_width():
    with pytest.raises(ModelError, match="width"):
        build_network("EEGNet", (4, 64), 2, filters=3)
    with pytest.raises(ModelError):
        build_network("ResNet", (4, 64), 2)


def test_eegnet_constraints():
    network = build_network("EEGNet", (4, 64), 2)
    with torch.no_grad():
        network.depthwise.weight.mul_(100.0)
        network.classifier.weight.mul_(100.0)
    network.apply_constraints()
    assert network.depthwise.weight.flatten(1).norm(dim=1).max() <= 1.0 + 1e-5
    assert network.classifier.weight.norm(dim=1).max() <= 0.25 + 1e-5


def test_model_spec_validation():
    with pytest.raises(ModelError):
        ModelSpec("LSTM", (4, 64), 2)
    with pytest.raises(ModelError):
        ModelSpec("EEGNet", (4, 64), 1)
    with pytest.raises(ModelError, match="hyperparameter"):
        ModelSpec("CSP_LR", (4, 64), 2, {"n_filters": 2})
    spec = ModelSpec("EEGNet", (4, 64), 2, {"F1": 4, "learning_rate": 0.01}, seed=5)
    assert spec.hp("batch_size") == 128
    assert spec.widths() == {"F1": 4}
    assert ModelSpec.from_dict(spec.to_dict()) == spec


def test_build_model_rejects_classical():
    with pytest.raises(ModelError):
        build_model(ModelSpec("CCA", (4, 64), 4))


def test_untrained_predictions_are_probabilities():
    model = build_model(ModelSpec("EEGNet", (4, 64), 3))
    proba = predict_proba(model, np.zeros((6, 4, 64), dtype=np.float32))
    assert proba.shape == (6, 3)
    assert np.allclose(proba.sum(axis=1), 1.0)
    with pytest.raises(ModelError, match="expects"):
        predict_proba(model, np.zeros((6, 5, 64)))


def test_labels_from_proba_ties_go_low():
    assert labels_from_proba(np.array([[0.5, 0.5], [0.2, 0.8]])).tolist() == [1, 2]


def test_check_labels():
    assert check_labels([1, 2, 2], 2).tolist() == [1, 2, 2]
    with pytest.raises(ModelError, match="absent"):
        check_labels([1, 1], 2)
    with pytest.raises(ModelError, match="1..2"):
        check_labels([0, 1, 2], 2)


def test_training_learns_separable_task():
    x, y = _power_task()
    spec = ModelSpec("ShallowCNN", (4, 64), 2, {"learning_rate": 1e-2, "batch_size": 16}, seed=0)
    model = build_model(spec, "toy")
    trained = train_classifier(model, x, y, epochs=30)

    assert len(trained.training_curve) == 30
    assert trained.training_curve[-1].train_bca >= 0.9
    assert np.mean(predict(trained, x) == y) >= 0.9
    # the input model is left untouched
    assert model.digest() != trained.digest()


def test_training_is_deterministic():
    x, y = _power_task()
    spec = ModelSpec("EEGNet", (4, 64), 2, {"batch_size": 16}, seed=2)
    a = train_classifier(build_model(spec), x, y, epochs=3)
    b = train_classifier(build_model(spec), x, y, epochs=3)
    assert a.digest() == b.digest()
    assert a.curve_dict() == b.curve_dict()


def test_training_records_eval_set():
    x, y = _power_task()
    spec = ModelSpec("EEGNet", (4, 64), 2, {"batch_size": 16})
    trained = train_classifier(build_model(spec), x, y, epochs=2, eval_set=(x[:10], y[:10]))
    assert all(r.test_bca is not None for r in trained.training_curve)


def test_training_rejects_missing_class():
    x, _ = _power_task()
    model = build_model(ModelSpec("EEGNet", (4, 64), 3))
    with pytest.raises(ModelError, match="absent"):
        train_classifier(model, x, np.arange(len(x)) % 2 + 1, epochs=1)


def test_zero_epochs_returns_copy():
    x, y = _power_task()
    model = build_model(ModelSpec("EEGNet", (4, 64), 2))
    trained = train_classifier(model, x, y, epochs=0)
    assert trained.digest() == model.digest()
    assert trained.network is not model.network


@pytest.mark.parametrize("arch,t,step", [("EEGNet", 64, 1e-3), ("ShallowCNN", 64, 1e-3), ("DeepCNN", 128, 1e-5)])
def test_parameter_gradients_match_finite_differences(arch, t, step):
    # small step keeps DeepCNN max-pooling on one side of its kinks
    x, y = _power_task(n=8, t=t)
    model = build_model(ModelSpec(arch, (4, t), 2, seed=1))
    assert check_gradients(model, x, y, n_entries=16, step=step) < 1e-3


@pytest.mark.parametrize("shape", [(8, 256), (62, 256)])
def test_eegnet_is_smaller_than_deepcnn(shape):
    def count(network):
        return sum(p.numel() for p in network.parameters())
    assert count(build_network("EEGNet", shape, 2)) < count(build_network("DeepCNN", shape, 2))


def test_freeze():
    model = build_model(ModelSpec("EEGNet", (4, 64), 2))
    network = freeze(model)
    assert not network.training
    assert not any(p.requires_grad for p in network.parameters())


def test_cnn_checkpoint_round_trip(tmp_path):
    x, y = _power_task()
    trained = train_classifier(build_model(ModelSpec("EEGNet", (4, 64), 2, {"batch_size": 16}), "gender"),
                               x, y, epochs=1)
    path = save_checkpoint(trained, tmp_path / "ckpt" / "eegnet")
    assert path.suffix == ".pt"
    assert (tmp_path / "ckpt" / "eegnet.json").is_file()

    loaded = load_checkpoint(tmp_path / "ckpt" / "eegnet")
    assert loaded.digest() == trained.digest()
    assert loaded.label_space == "gender"
    assert np.allclose(predict_proba(loaded, x), predict_proba(trained, x))
    assert len(loaded.training_curve) == 1


def test_classical_checkpoint_round_trip(tmp_path):
    x, y = _power_task()
    model = fit_csp_lr(x, y, n_pairs=1)
    path = save_checkpoint(model, tmp_path / "csp")
    assert path.suffix == ".pkl"
    loaded = load_checkpoint(tmp_path / "csp")
    assert loaded.digest() == model.digest()
    assert np.array_equal(predict(loaded, x), predict(model, x))


def test_load_checkpoint_missing(tmp_path):
    with pytest.raises(FileSystemError):
        load_checkpoint(tmp_path / "nothing")


def test_eegnet_type():
    assert isinstance(build_model(ModelSpec("EEGNet", (4, 64), 2)).network, EEGNet)
