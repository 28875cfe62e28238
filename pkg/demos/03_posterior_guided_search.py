"""Amortized skeleton posterior and the posterior-guided optimizer.

1. Train a small cascade on graphs from the static simulator.
2. Infer p(adjacent) for a new dataset in one forward pass.
3. Adapt the posterior to that dataset with the bootstrap (dynamic) simulator.
4. Compare plain ABIC with the posterior-guided search on that dataset.

Sizes are kept small so the script runs in a couple of minutes.
"""
import time

from spotmag.abic import AbicConfig, abic_fit
from spotmag.graph import mag_to_pag
from spotmag.metrics import pag_metrics, posterior_quality
from spotmag.posterior import CascadeConfig, dynamic_posterior, infer_posterior, train_cascade
from spotmag.simulate import GraphSamplerConfig, generate_corpus, simulate_instance, task_rng
from spotmag.spot import GuideConfig, spot_fit

corpus = generate_corpus(40, GraphSamplerConfig(d=(15, 25)), 1000, 1)
t0 = time.time()
model = train_cascade(corpus, CascadeConfig(n_stages=3, seed=0))
print(f"trained a {len(model.stages)}-stage cascade on {len(corpus)} graphs in {time.time() - t0:.0f}s")

inst = simulate_instance(GraphSamplerConfig(d=20), 1000, task_rng(2024, 0))
post = infer_posterior(model, inst.data)
q = posterior_quality(post, inst.skeleton)
print(f"posterior on a fresh graph: AUROC {q.auroc:.3f}  AUPRC {q.auprc:.3f}  KL {q.kl:.3f}")

t0 = time.time()
adapted = dynamic_posterior(model, inst.data, replicas=10, rng=0)
qa = posterior_quality(adapted, inst.skeleton)
print(f"after adaptation on 10 bootstrap replicas: AUROC {qa.auroc:.3f}  KL {qa.kl:.3f}  "
      f"({time.time() - t0:.0f}s)")

truth = mag_to_pag(inst.mag)
cfg = AbicConfig()
for name, run in (("ABIC", lambda: abic_fit(inst.data, cfg)),
                  ("SPOT", lambda: spot_fit(inst.data, post, cfg, GuideConfig(c=0.1)))):
    t0 = time.time()
    res = run()
    m = pag_metrics(res.graph, truth)
    print(f"{name}: skeleton F1 {m.skeleton.f1:.2f}  arrowhead F1 {m.arrowhead.f1:.2f}  "
          f"tail F1 {m.tail.f1:.2f}  ({time.time() - t0:.0f}s, {len(res.trace)} inner steps)")
