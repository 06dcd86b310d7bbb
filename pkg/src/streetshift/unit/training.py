"""Alternating discriminator / encoder-generator updates."""
from __future__ import annotations

import logging
import math

import numpy as np

from ..numeric import AdamState, adam_step
from .inference import as_batch, draw_noise, to_unit
from .model import LOSS_TERMS, TrainState, UnitModel, build_dis_graph, build_fakes_graph, build_loss_graph

log = logging.getLogger(__name__)

TRACE_FIELDS = ("step",) + LOSS_TERMS + ("total", "dis_a", "dis_b", "dis_total")


class NonFiniteLossError(FloatingPointError):
    def __init__(self, term, step):
        self.term = term
        self.step = step
        super().__init__(f"non-finite loss term {term!r} at step {step}")


def init_train_state(model: UnitModel, seed: int) -> TrainState:
    cfg = model.config
    opt = dict(lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.adam_eps)
    return TrainState(step=0, rng=np.random.default_rng(seed), gen_opt=AdamState(**opt), dis_opt=AdamState(**opt))


def _check_finite(values: dict, step):
    for k, v in values.items():
        if not math.isfinite(float(v)):
            raise NonFiniteLossError(k, step)


def train(model: UnitModel, domain_a, domain_b, steps: int, seed: int | None = None,
          trace_every: int = 1, callback=None):
    """Run ``steps`` alternating updates and return the loss trace.

    The model's optimizer moments, sampling RNG and step counter live in
    ``model.train_state``; a fresh one is seeded from ``seed`` (default: the
    config seed) the first time a model is trained, and later calls resume
    from it. ``callback(model, step)`` runs after every step.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    a, _ = as_batch(domain_a, model.image_size)
    b, _ = as_batch(domain_b, model.image_size)
    if len(a) == 0 or len(b) == 0:
        raise ValueError("both domains must be non-empty")
    if model.train_state is None:
        model.train_state = init_train_state(model, model.config.seed if seed is None else seed)
    st = model.train_state
    n = model.config.batch_size

    gen_names = [k for k in model.params if k.startswith(("enc_", "gen_"))]
    dis_names = [k for k in model.params if k.startswith("dis_")]
    gen_arrays = {k: model.params[k].data for k in gen_names}
    dis_arrays = {k: model.params[k].data for k in dis_names}
    loss_graph = model.graph(("loss", n), lambda: build_loss_graph(model, n))
    dis_graph = model.graph(("dis", n), lambda: build_dis_graph(model, n))
    fakes_graph = model.graph(("fakes", n), lambda: build_fakes_graph(model, n))

    trace = []
    for _ in range(steps):
        step = st.step + 1
        ia = st.rng.integers(len(a), size=n)
        ib = st.rng.integers(len(b), size=n)
        xa, xb = to_unit(a[ia]), to_unit(b[ib])
        noise = draw_noise(model, st.rng, n)
        feeds = {"xa": xa, "xb": xb, **noise}

        # (1) discriminators: real -> 1, current translations -> 0
        fakes = fakes_graph.forward({"xa": xa, "xb": xb, "eps_a": noise["eps_a"], "eps_b": noise["eps_b"]})
        dis_out = dis_graph.forward({"xa": xa, "xb": xb, "fake_a": fakes["ba"], "fake_b": fakes["ab"]})
        _check_finite({k: dis_out[k] for k in ("dis_a", "dis_b")}, step)
        dis_grads = dis_graph.backward("loss", params=set(dis_names))
        adam_step(dis_arrays, dis_grads, st.dis_opt)

        # (2) encoders + generators against the updated discriminators
        out = loss_graph.forward(feeds)
        _check_finite({k: out[k] for k in LOSS_TERMS + ("total",)}, step)
        gen_grads = loss_graph.backward("total", params=set(gen_names))
        adam_step(gen_arrays, gen_grads, st.gen_opt)

        st.step = step
        if step % trace_every == 0:
            row = {"step": step}
            row.update({k: float(out[k]) for k in LOSS_TERMS + ("total",)})
            row["dis_a"] = float(dis_out["dis_a"])
            row["dis_b"] = float(dis_out["dis_b"])
            row["dis_total"] = float(dis_out["loss"])
            trace.append(row)
        if callback is not None:
            callback(model, step)
    log.debug("trained to step %d", st.step)
    return trace
