import math

import numpy as np
import pytest

from ptnoise.encoder import class_embeddings
from ptnoise.errors import DegenerateProbability, InvalidCombination, InvalidValue
from ptnoise.losses import LossSpec, loss_grad_probs
from ptnoise.methods import (
    KINDS,
    PAPER_LR,
    MethodSpec,
    TrainConfig,
    build_method_state,
    cosine_lr,
    evaluate_accuracy,
    forward_posterior,
    loss_and_grads,
    state_class_rows,
    train,
)
from ptnoise.world import inject_random_noise, sample_dataset, zero_shot_accuracy

TRAINABLE = {
    "PromptTuning": {"prompt"},
    "ClassifierR": {"classifier"},
    "ClassifierC": {"classifier"},
    "TEncFT": {"enc.wq", "enc.wk", "enc.wv", "enc.w1", "enc.b1", "enc.w2", "enc.b2", "enc.wout"},
    "FullPromptTuning": {"prompt", "vocab"},
    "CLSTuning": {"vocab"},
    "ZeroShot": set(),
}


def test_train_config_defaults_and_validation():
    c = TrainConfig()
    assert (c.epochs, c.batch_size, c.momentum) == (50, 32, 0.9)
    for bad in ({"epochs": -1}, {"batch_size": 0}, {"lr": -1.0}, {"momentum": 1.0}):
        with pytest.raises(InvalidValue):
            TrainConfig(**bad)


def test_context_len_rules():
    for k in ("ZeroShot", "CLSTuning", "TEncFT"):
        MethodSpec(k, 0)
    for k in ("PromptTuning", "FullPromptTuning", "ClassifierR", "ClassifierC"):
        with pytest.raises(InvalidCombination):
            MethodSpec(k, 0)
    with pytest.raises(InvalidValue):
        MethodSpec("Linear")


@pytest.mark.parametrize("kind", KINDS)
def test_trainable_groups(small_world, kind):
    st = build_method_state(MethodSpec(kind), small_world, 0)
    assert set(st.trainable) == TRAINABLE[kind]
    assert set(st.momentum) == TRAINABLE[kind]


def test_zero_shot_has_no_parameters(small_world):
    assert build_method_state(MethodSpec("ZeroShot"), small_world).n_parameters() == 0


def test_prompt_init_scale(default_world):
    st = build_method_state(MethodSpec("PromptTuning"), default_world, 0)
    assert st.prompt.shape == (16, 16)
    assert np.std(st.prompt) == pytest.approx(0.02, rel=0.15)
    rows = build_method_state(MethodSpec("ClassifierR"), default_world, 0).classifier
    assert np.std(rows) == pytest.approx(1 / math.sqrt(16), rel=0.15)


def test_classifier_c_matches_zero_shot(default_world):
    cc = build_method_state(MethodSpec("ClassifierC"), default_world)
    zs = build_method_state(MethodSpec("ZeroShot"), default_world)
    assert np.array_equal(cc.classifier, class_embeddings(default_world.weights, default_world.template_prompt,
                                                          default_world.vocab))
    test = sample_dataset(default_world, "test")
    assert evaluate_accuracy(cc, None, default_world, test) == evaluate_accuracy(zs, None, default_world, test)
    np.testing.assert_allclose(forward_posterior(cc, None, default_world, test.images[0]),
                               forward_posterior(zs, None, default_world, test.images[0]), atol=1e-14)


def test_truth_prompt_zero_shot_perfect_at_sigma0(tiny_config):
    from dataclasses import replace
    from ptnoise.world import generate_world

    w = generate_world(replace(tiny_config, image_noise_std=0.0))
    st = build_method_state(MethodSpec("ZeroShot"), w)
    st.prompt = w.truth_prompt
    test = sample_dataset(w, "test")
    assert evaluate_accuracy(st, None, w, test) == 1.0
    p = forward_posterior(st, None, w, test.images[0])
    assert abs(p.sum() - 1) <= 1e-12


def test_random_classifier_near_chance(default_world):
    from dataclasses import replace
    from ptnoise.world import generate_world

    w = generate_world(replace(default_world.config, test_per_class=300))
    accs = [evaluate_accuracy(build_method_state(MethodSpec("ClassifierR"), w, s), None, w,
                              sample_dataset(w, "test")) for s in range(5)]
    assert abs(np.mean(accs) - 0.1) <= 0.05


def test_cosine_lr():
    assert cosine_lr(0, 50, PAPER_LR) == 0.002
    assert cosine_lr(25, 50, PAPER_LR) == pytest.approx(0.001, abs=1e-18)
    assert cosine_lr(49, 50, PAPER_LR) == pytest.approx(0.002 * 0.5 * (1 + math.cos(49 * math.pi / 50)))
    assert cosine_lr(49, 50, PAPER_LR) == pytest.approx(1.97e-6, abs=1e-8)
    with pytest.raises(ValueError):
        cosine_lr(50, 50, PAPER_LR)


@pytest.mark.parametrize("kind", KINDS)
def test_frozen_groups_untouched(small_world, kind):
    data = inject_random_noise(sample_dataset(small_world, "train"), 0.25, 0)
    st = build_method_state(MethodSpec(kind), small_world, 0)
    before = {k: v.copy() for k, v in st.tensors().items()}
    world_vocab = small_world.vocab.copy()
    trained, hist = train(st, MethodSpec(kind), data, TrainConfig(epochs=2, lr=0.05))
    after = trained.tensors()
    for name, val in before.items():
        if name in TRAINABLE[kind]:
            continue
        assert np.array_equal(after[name], val), name
    # input state and the world are never written
    for name, val in before.items():
        assert np.array_equal(st.tensors()[name], val)
    assert np.array_equal(small_world.vocab, world_vocab)
    if TRAINABLE[kind]:
        assert any(not np.array_equal(after[n], before[n]) for n in TRAINABLE[kind])
    assert len(hist) == 2 and {"epoch", "lr", "train_loss"} <= set(hist[0])


def test_epochs_zero_and_lr_zero_are_noops(small_world):
    data = sample_dataset(small_world, "train")
    st = build_method_state(MethodSpec("FullPromptTuning"), small_world, 1)
    for cfg in (TrainConfig(epochs=0), TrainConfig(epochs=3, lr=0.0)):
        out, _ = train(st, MethodSpec("FullPromptTuning"), data, cfg)
        assert np.array_equal(out.prompt, st.prompt) and np.array_equal(out.vocab, st.vocab)


def test_training_deterministic(small_world):
    data = inject_random_noise(sample_dataset(small_world, "train"), 0.5, 2)
    cfg = TrainConfig(epochs=3, lr=0.05, loss=LossSpec("GCE"), seed=4)
    a, ha = train(build_method_state(MethodSpec("PromptTuning"), small_world, 4), MethodSpec(), data, cfg)
    b, hb = train(build_method_state(MethodSpec("PromptTuning"), small_world, 4), MethodSpec(), data, cfg)
    assert np.array_equal(a.prompt, b.prompt) and ha == hb


def test_one_step_matches_manual_momentum_sgd(small_world):
    """One update on a 1-sample batch, recomputed without the tape."""
    data = sample_dataset(small_world, "train").subset([5])
    spec = MethodSpec("ClassifierR")
    st = build_method_state(spec, small_world, 2)
    st.momentum["classifier"] = np.full_like(st.classifier, 0.01)  # nonzero buffer exercises m*v
    lr, m, tau = 0.03, 0.9, small_world.temperature
    out, _ = train(st, spec, data, TrainConfig(epochs=1, batch_size=1, lr=lr, momentum=m))

    # oracle: logits z_j = <x, w_j/|w_j|>/tau; dL/dw_j by the quotient rule
    x, c = data.images[0], data.observed_labels[0]
    W = st.classifier
    n = np.linalg.norm(W, axis=1)
    U = W / n[:, None]
    z = U @ x / tau
    p = np.exp(z - z.max())
    p /= p.sum()
    dl_dp = loss_grad_probs(LossSpec("CE"), p, c)
    dl_dz = p * (dl_dp - dl_dp @ p)
    g = np.empty_like(W)
    for j in range(len(W)):
        du = dl_dz[j] * x / tau
        g[j] = (du - U[j] * (U[j] @ du)) / n[j]
    v = m * 0.01 + g
    np.testing.assert_allclose(out.classifier, W - lr * v, rtol=0, atol=1e-12)


def test_loss_descends_on_clean_data(default_world):
    from dataclasses import replace
    from ptnoise.world import generate_world

    first, last = [], []
    for s in range(4):
        w = generate_world(replace(default_world.config, image_noise_std=0.0, seed=s))
        st = build_method_state(MethodSpec("PromptTuning"), w, s)
        _, hist = train(st, MethodSpec(), sample_dataset(w, "train"), TrainConfig(lr=PAPER_LR, seed=s))
        first.append(hist[0]["train_loss"])
        last.append(hist[-1]["train_loss"])
    assert np.mean(last) < np.mean(first)


def test_degenerate_probability_carries_context(small_world):
    data = sample_dataset(small_world, "train")
    st = build_method_state(MethodSpec("ClassifierR"), small_world, 0)
    # rows pointing away from the images make the observed-class posterior underflow
    st.classifier = -small_world.prototypes[[1, 2, 3, 0]] * 1.0
    st.temperature = 1e-4
    with pytest.raises(DegenerateProbability, match="method=ClassifierR"):
        train(st, MethodSpec("ClassifierR"), data, TrainConfig(epochs=1))


def test_loss_and_grads_shapes(small_world):
    st = build_method_state(MethodSpec("FullPromptTuning"), small_world, 0)
    data = sample_dataset(small_world, "train")
    val, grads = loss_and_grads(st, data.images[:6], data.observed_labels[:6], LossSpec())
    assert val > 0
    assert grads["prompt"].shape == st.prompt.shape and grads["vocab"].shape == st.vocab.shape
    np.testing.assert_allclose(np.linalg.norm(state_class_rows(st), axis=1), 1.0, atol=1e-12)


def test_ctx0_variants_run(small_world):
    data = sample_dataset(small_world, "train")
    for kind in ("ZeroShot", "CLSTuning", "TEncFT"):
        st = build_method_state(MethodSpec(kind, 0), small_world, 0)
        assert len(st.prompt) == 0
        out, _ = train(st, MethodSpec(kind, 0), data, TrainConfig(epochs=1, lr=0.01))
        assert 0.0 <= evaluate_accuracy(out, None, small_world, sample_dataset(small_world, "test")) <= 1.0
    with pytest.raises(InvalidCombination):
        build_method_state(MethodSpec("PromptTuning", 99), small_world)
