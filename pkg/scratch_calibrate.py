"""Scratch calibration: small-scale dynamics probe (not part of the package)."""
import sys
import time

import numpy as np

from safeclip.attacks import AttackSpec, choose_targets, inject
from safeclip.evaluation import (
    EvalContext,
    build_attack_eval_sets,
    class_prompts,
    context_metrics,
    safe_set_poison_stats,
)
from safeclip.model import init_model
from safeclip.synthdata import generate_corpus, split_corpus
from safeclip.trainer import TrainConfig, run_safeclip_training, train_clip_baseline

lr = float(sys.argv[1]) if len(sys.argv) > 1 else 0.5
n_train = int(sys.argv[2]) if len(sys.argv) > 2 else 2000
T = int(sys.argv[3]) if len(sys.argv) > 3 else 12

t0 = time.time()
full = generate_corpus(seed=0, n_pairs=n_train + 600, class_count=10)
train, test, pool = split_corpus(full, [n_train, 400, 200])

adv = 3
targets = choose_targets(pool, adv, count=2, seed=1)
spec = AttackSpec(kind="tdpa", poison_rate=0.005, adversarial_class=adv, target_images=targets, seed=2)
poisoned = inject(train, spec, pool)
print(f"corpus built ({time.time()-t0:.1f}s): {len(poisoned)} pairs, {sum(t is not None for t in poisoned.poison_tags)} poisons")

prompts = class_prompts(train.vocab)
ctx = EvalContext(test.images, test.true_classes, prompts, build_attack_eval_sets(spec, pool, test))

cfg = TrainConfig(warmup_epochs=5, total_epochs=T, lr=lr, batch_size=128, seed=0)

# clean baseline
t0 = time.time()
state = init_model(0, rep_dim=32, image_shape=train.image_shape, vocab_size=train.vocab.vocab_size)
res_clean = train_clip_baseline(state, train, cfg, ctx, eval_every=0)
m_clean = context_metrics(res_clean.state, ctx)
print(f"clean baseline ({time.time()-t0:.1f}s): zs={m_clean['zero_shot_acc']:.3f} asr={m_clean['asr:tdpa']:.3f} tau={res_clean.state.temperature:.3f}")

# poisoned baseline
t0 = time.time()
state = init_model(0, rep_dim=32, image_shape=train.image_shape, vocab_size=train.vocab.vocab_size)
res_poison = train_clip_baseline(state, poisoned, cfg, ctx, eval_every=0)
m_poison = context_metrics(res_poison.state, ctx)
print(f"poisoned baseline ({time.time()-t0:.1f}s): zs={m_poison['zero_shot_acc']:.3f} asr={m_poison['asr:tdpa']:.3f} tau={res_poison.state.temperature:.3f}")

# safeclip
t0 = time.time()
state = init_model(0, rep_dim=32, image_shape=train.image_shape, vocab_size=train.vocab.vocab_size)
res_safe = run_safeclip_training(state, poisoned, cfg, ctx, eval_every=0)
m_safe = context_metrics(res_safe.state, ctx)
first = res_safe.partition_trace[0]
fs, fc = safe_set_poison_stats(first.partition, poisoned)
poison_total = sum(t is not None for t in poisoned.poison_tags)
in_safe = int(round(fc * len(poisoned)))
print(f"safeclip ({time.time()-t0:.1f}s): zs={m_safe['zero_shot_acc']:.3f} asr={m_safe['asr:tdpa']:.3f} tau={res_safe.state.temperature:.3f}")
print(f"  initial partition: m0={first.partition.safe_ratio_m:.1f}% poisons_in_safe={in_safe}/{poison_total} frac_of_safe={fs:.4f}")
for rec in res_safe.metrics[:3] + res_safe.metrics[-2:]:
    print("  ", {k: (round(v, 4) if isinstance(v, float) else v) for k, v in rec.items()})
