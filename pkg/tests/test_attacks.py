import numpy as np
import pytest

from safeclip.attacks import (
    AttackSpec,
    TriggerParams,
    apply_hybrid_trigger,
    apply_trigger,
    build_adversarial_captions,
    choose_targets,
    inject_backdoor,
    inject_tdpa,
    poison_budget,
    warp_field,
    warp_image,
)
from safeclip.errors import ConfigurationError
from safeclip.synthdata import generate_corpus, split_corpus


@pytest.fixture(scope="module")
def corpora():
    full = generate_corpus(seed=3, n_pairs=1200, class_count=10)
    train, source = split_corpus(full, [1000, 200])
    return train, source


# -------------------------------------------------------- adversarial captions


def test_adversarial_caption_set_counts(corpora):
    train, _ = corpora
    t_adv = build_adversarial_captions(train, adversarial_class=4)
    assert len(t_adv) == 100


def test_adversarial_captions_contain_class_tokens(corpora):
    train, _ = corpora
    lo, hi = train.vocab.class_ranges[4]
    for cap in build_adversarial_captions(train, 4):
        assert np.any((cap >= lo) & (cap < hi))


def test_caption_cycling_when_budget_exceeds_captions(corpora):
    train, source = corpora
    spec = AttackSpec(
        kind="tdpa",
        poison_rate=0.01,  # 10 poisons on a 1000-pair corpus
        adversarial_class=2,
        target_images=tuple(choose_targets(source, 2, 2, seed=5)),
    )
    poisoned = inject_tdpa(train, spec, source)
    t_adv = build_adversarial_captions(train, 2)
    injected = poisoned.captions[len(train):]
    for j, cap in enumerate(injected):
        assert np.array_equal(cap, t_adv[j % len(t_adv)])


# ----------------------------------------------------------------- tdpa


def test_tdpa_injection_counts_and_tags(corpora):
    train, source = corpora
    targets = choose_targets(source, adversarial_class=1, count=4, seed=0)
    spec = AttackSpec(kind="tdpa", poison_rate=0.01, adversarial_class=1, target_images=targets)
    poisoned = inject_tdpa(train, spec, source)
    assert len(poisoned) == len(train) + poison_budget(0.01, len(train))
    injected_tags = poisoned.poison_tags[len(train):]
    assert set(injected_tags) == {"tdpa"}
    assert all(tag is None for tag in poisoned.poison_tags[: len(train)])


def test_tdpa_budget_split_evenly_across_targets(corpora):
    train, source = corpora
    targets = choose_targets(source, adversarial_class=1, count=2, seed=1)
    spec = AttackSpec(kind="tdpa", poison_rate=0.01, adversarial_class=1, target_images=targets)
    poisoned = inject_tdpa(train, spec, source)
    injected_images = poisoned.images[len(train):]
    hits = [
        int(np.sum([np.array_equal(img, source.images[t]) for img in injected_images]))
        for t in targets
    ]
    assert hits == [5, 5]


def test_tdpa_rejects_adversarial_class_targets(corpora):
    train, source = corpora
    bad_target = int(np.flatnonzero(source.true_classes == 3)[0])
    spec = AttackSpec(kind="tdpa", poison_rate=0.01, adversarial_class=3, target_images=(bad_target,))
    with pytest.raises(ConfigurationError):
        inject_tdpa(train, spec, source)


def test_tdpa_rejects_empty_budget(corpora):
    train, source = corpora
    targets = choose_targets(source, adversarial_class=1, count=1, seed=2)
    spec = AttackSpec(kind="tdpa", poison_rate=0.0005, adversarial_class=1, target_images=targets)
    with pytest.raises(ConfigurationError):
        inject_tdpa(train, spec, source)  # 0.0005 * 1000 < 1


# --------------------------------------------------------------- triggers


def test_badnet_patch_sets_corner_to_one(corpora):
    _, source = corpora
    params = TriggerParams()
    out = apply_trigger(source.images[0], "badnet", params)
    assert np.all(out[-3:, -3:] == 1.0)


def test_badnet_is_idempotent(corpora):
    _, source = corpora
    params = TriggerParams()
    once = apply_trigger(source.images[1], "badnet", params)
    twice = apply_trigger(once, "badnet", params)
    assert np.array_equal(once, twice)


def test_blended_alpha_zero_is_identity(corpora):
    _, source = corpora
    params = TriggerParams(blend_alpha=0.0)
    out = apply_trigger(source.images[2], "blended", params)
    assert np.allclose(out, source.images[2])


def test_blended_deterministic(corpora):
    _, source = corpora
    params = TriggerParams()
    a = apply_trigger(source.images[3], "blended", params)
    b = apply_trigger(source.images[3], "blended", params)
    assert np.array_equal(a, b)


def test_warp_zero_field_is_identity(corpora):
    _, source = corpora
    img = source.images[4]
    out = warp_image(img, np.zeros((2,) + img.shape))
    assert np.allclose(out, img)


def test_warp_field_respects_max_displacement():
    field = warp_field((16, 16), seed=11, max_px=1.5, grid=4)
    assert np.max(np.abs(field)) <= 1.5 + 1e-12


def test_unknown_trigger_kind_rejected(corpora):
    _, source = corpora
    with pytest.raises(ConfigurationError):
        apply_trigger(source.images[0], "glitter", TriggerParams())


# ---------------------------------------------------------------- backdoors


def test_badnet_injection_counts_and_classes(corpora):
    train, source = corpora
    spec = AttackSpec(kind="badnet", poison_rate=0.01, adversarial_class=5, seed=3)
    poisoned = inject_backdoor(train, spec, source)
    injected = slice(len(train), len(poisoned))
    assert len(poisoned) - len(train) == 10
    assert set(poisoned.poison_tags[injected]) == {"badnet"}
    # poisoned images never come from the adversarial class
    assert np.all(poisoned.true_classes[injected] != 5)
    # every poisoned image carries the patch
    assert all(np.all(img[-3:, -3:] == 1.0) for img in poisoned.images[injected])


def test_label_consistent_keeps_own_captions(corpora):
    train, source = corpora
    spec = AttackSpec(kind="label_consistent", poison_rate=0.01, adversarial_class=6, seed=4)
    poisoned = inject_backdoor(train, spec, source)
    injected = slice(len(train), len(poisoned))
    assert np.all(poisoned.true_classes[injected] == 6)
    lo, hi = train.vocab.class_ranges[6]
    for cap in poisoned.captions[injected]:
        assert np.any((cap >= lo) & (cap < hi))


def test_htba_images_carry_all_three_triggers(corpora):
    train, source = corpora
    params = TriggerParams()
    spec = AttackSpec(kind="htba", poison_rate=0.01, adversarial_class=7, seed=5, trigger_params=params)
    poisoned = inject_backdoor(train, spec, source)
    injected_imgs = poisoned.images[len(train):]
    for img in injected_imgs:
        assert np.all(img[-3:, -3:] == 1.0)  # badnet applied last
    # every poisoned image must be reproducible as warp -> blended -> badnet of a source image
    for img in injected_imgs[:3]:
        assert any(
            np.array_equal(apply_hybrid_trigger(source.images[i], params), img)
            for i in range(len(source))
        )


def test_pba_all2one_splits_budget_single_class(corpora):
    train, source = corpora
    spec = AttackSpec(kind="pba_all2one", poison_rate=0.01, adversarial_class=8, seed=6)
    poisoned = inject_backdoor(train, spec, source)
    tags = poisoned.poison_tags[len(train):]
    assert len(tags) == 10
    counts = {t: tags.count(t) for t in set(tags)}
    assert counts == {"pba_all2one:badnet": 4, "pba_all2one:blended": 3, "pba_all2one:warp": 3}


def test_pba_all2all_full_budget_per_trigger_distinct_classes(corpora):
    train, source = corpora
    spec = AttackSpec(kind="pba_all2all", poison_rate=0.005, adversarial_class=(1, 4, 9), seed=7)
    poisoned = inject_backdoor(train, spec, source)
    tags = poisoned.poison_tags[len(train):]
    assert len(tags) == 15  # floor(0.005 * 1000) = 5 pairs per trigger
    for kind in ("badnet", "blended", "warp"):
        assert tags.count(f"pba_all2all:{kind}") == 5


def test_pba_all2all_requires_distinct_classes():
    with pytest.raises(ConfigurationError):
        AttackSpec(kind="pba_all2all", poison_rate=0.005, adversarial_class=(1, 1, 2)).validate()


def test_poison_rate_out_of_desk_range_rejected():
    with pytest.raises(ConfigurationError):
        AttackSpec(kind="badnet", poison_rate=0.05, adversarial_class=0).validate()
