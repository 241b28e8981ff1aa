"""Finite-difference verification of every gradient path.

Three layers of checks, each against central differences at h=1e-5:
small random cases for every primitive (tolerance 1e-6), the broadened
eigendecomposition backward (1e-4, the analytic rule smooths truly tiny
eigengaps), and the full forecaster loss differentiated through every
named parameter on a seeded 3-agent scene (1e-4).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .model import Forecaster, ModelConfig, init_params
from .spectral import eigh_sym
from .training import loss_total

PRIMITIVE_TOL = 1e-6
EIGH_TOL = 1e-4
MODEL_TOL = 1e-4
FD_STEP = 1e-5


@dataclass
class CheckResult:
    name: str
    max_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance

    def line(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        return (f"{verdict}  {self.name:<34} max_rel_err={self.max_error:.3e} "
                f"tol={self.tolerance:.0e}")


def _rng_tensor(rng, shape, lo=-1.0, hi=1.0):
    return T.parameter(rng.uniform(lo, hi, shape))


def _primitive_cases(seed: int):
    """(name, f, x) triples; every differentiable op appears at least once."""
    rng = np.random.default_rng(seed)
    w = rng.normal(size=(3, 4))
    cases = []

    def case(name, x, fn):
        cases.append((name, fn, x))

    case("add", _rng_tensor(rng, (3, 4)),
         lambda x: T.sum_(T.mul(T.add(x, T.constant(w)), T.constant(w))))
    case("sub", _rng_tensor(rng, (3, 4)),
         lambda x: T.sum_(T.mul(T.sub(x, T.constant(w)), T.constant(w))))
    case("mul", _rng_tensor(rng, (3, 4)),
         lambda x: T.sum_(T.mul(x, x)))
    case("div", _rng_tensor(rng, (3, 4), lo=0.5, hi=2.0),
         lambda x: T.sum_(T.div(T.constant(w), x)))
    case("neg", _rng_tensor(rng, (3, 4)),
         lambda x: T.sum_(T.mul(T.neg(x), T.constant(w))))
    case("pow_scalar", _rng_tensor(rng, (3, 4), lo=0.5, hi=2.0),
         lambda x: T.sum_(T.pow_scalar(x, 1.7)))
    case("exp", _rng_tensor(rng, (3, 4)),
         lambda x: T.sum_(T.exp(x)))
    case("log", _rng_tensor(rng, (3, 4), lo=0.5, hi=2.0),
         lambda x: T.sum_(T.log(x)))
    case("sqrt", _rng_tensor(rng, (3, 4), lo=0.5, hi=2.0),
         lambda x: T.sum_(T.sqrt(x)))
    case("tanh", _rng_tensor(rng, (3, 4)),
         lambda x: T.sum_(T.mul(T.tanh(x), T.constant(w))))
    case("sigmoid", _rng_tensor(rng, (3, 4)),
         lambda x: T.sum_(T.mul(T.sigmoid(x), T.constant(w))))
    # keep inputs away from the clip edges and the rectifier kink so the
    # central difference never straddles a non-smooth point
    clipped = T.parameter(rng.uniform(-0.8, 0.8, (3, 4)))
    case("clip", clipped,
         lambda x: T.sum_(T.mul(T.clip(x, -1.0, 1.0), T.constant(w))))
    kinked = rng.uniform(0.3, 1.0, (3, 4)) * rng.choice([-1.0, 1.0], (3, 4))
    slope = T.constant(np.full(4, 0.25))
    case("prelu.x", T.parameter(kinked),
         lambda x: T.sum_(T.mul(T.prelu(x, slope), T.constant(w))))
    fixed = T.constant(kinked)
    case("prelu.slope", T.parameter(np.full(4, 0.25)),
         lambda s: T.sum_(T.mul(T.prelu(fixed, s), T.constant(w))))
    case("softmax", _rng_tensor(rng, (3, 4)),
         lambda x: T.sum_(T.mul(T.softmax(x, axis=-1), T.constant(w))))
    m_right = T.constant(rng.normal(size=(4, 2)))
    case("matmul.left", _rng_tensor(rng, (3, 4)),
         lambda x: T.sum_(T.matmul(x, m_right)))
    m_left = T.constant(rng.normal(size=(2, 3)))
    w24 = T.constant(rng.normal(size=(2, 4)))
    case("matmul.right", _rng_tensor(rng, (3, 4)),
         lambda x: T.sum_(T.mul(T.matmul(m_left, x), w24)))
    w423 = T.constant(rng.normal(size=(4, 2, 3)))
    case("transpose", _rng_tensor(rng, (2, 3, 4)),
         lambda x: T.sum_(T.mul(T.transpose(x, (2, 0, 1)), w423)))
    w26 = T.constant(rng.normal(size=(2, 6)))
    case("reshape", _rng_tensor(rng, (3, 4)),
         lambda x: T.sum_(T.mul(T.reshape(x, (2, 6)), w26)))
    case("broadcast_to", _rng_tensor(rng, (1, 4)),
         lambda x: T.sum_(T.mul(T.broadcast_to(x, (3, 4)), T.constant(w))))
    w2x4 = T.constant(rng.normal(size=(2, 4)))
    case("take", _rng_tensor(rng, (3, 4)),
         lambda x: T.sum_(T.mul(T.take(x, (slice(1, 3), slice(None))), w2x4)))
    other = T.constant(rng.normal(size=(3, 4)))
    w38 = T.constant(rng.normal(size=(3, 8)))
    case("concat", _rng_tensor(rng, (3, 4)),
         lambda x: T.sum_(T.mul(T.concat([x, other], axis=1), w38)))
    w234 = T.constant(rng.normal(size=(2, 3, 4)))
    case("stack", _rng_tensor(rng, (3, 4)),
         lambda x: T.sum_(T.mul(T.stack([x, other], axis=0), w234)))
    w14 = T.constant(rng.normal(size=(1, 4)))
    case("sum", _rng_tensor(rng, (3, 4)),
         lambda x: T.sum_(T.mul(T.sum_(x, axis=0, keepdims=True), w14)))
    w31 = T.constant(rng.normal(size=(3, 1)))
    case("mean", _rng_tensor(rng, (3, 4)),
         lambda x: T.sum_(T.mul(T.mean(x, axis=1, keepdims=True), w31)))
    kernel = T.constant(rng.normal(size=(1, 3, 2, 3)) * 0.5)
    w533 = T.constant(rng.normal(size=(5, 3, 3)))
    case("conv_time.x", _rng_tensor(rng, (5, 3, 2)),
         lambda x: T.sum_(T.mul(T.conv_time(x, kernel), w533)))
    signal = T.constant(rng.normal(size=(5, 3, 2)))
    case("conv_time.kernel", _rng_tensor(rng, (1, 3, 2, 3)),
         lambda k: T.sum_(T.mul(T.conv_time(signal, k), w533)))
    k2 = T.constant(rng.normal(size=(3, 3, 2, 3)) * 0.4)
    w563 = T.constant(rng.normal(size=(5, 6, 3)))
    case("conv2d.x", _rng_tensor(rng, (5, 6, 2)),
         lambda x: T.sum_(T.mul(T.conv2d(x, k2), w563)))
    img = T.constant(rng.normal(size=(5, 6, 2)))
    case("conv2d.kernel", _rng_tensor(rng, (3, 3, 2, 3)),
         lambda k: T.sum_(T.mul(T.conv2d(img, k), w563)))
    # sample points sit strictly inside pixel cells so the interpolation
    # is smooth within the finite-difference stencil
    cols = np.array([1.3, 2.6, 0.4])
    rows = np.array([0.7, 3.2, 2.5])
    w32 = T.constant(rng.normal(size=(3, 2)))
    case("bilinear_sample", _rng_tensor(rng, (5, 6, 2)),
         lambda x: T.sum_(T.mul(T.bilinear_sample(x, cols, rows), w32)))
    return cases


def check_primitives(seed: int = 0) -> list[CheckResult]:
    results = []
    for name, fn, x in _primitive_cases(seed):
        err = T.grad_check(fn, x, h=FD_STEP)
        results.append(CheckResult(f"primitive.{name}", err, PRIMITIVE_TOL))
    return results


def check_eigensolver(seed: int = 0) -> CheckResult:
    """Backward of the symmetric eigendecomposition on a gapped matrix."""
    rng = np.random.default_rng(seed)
    n = 5
    # build from free entries so finite differences preserve symmetry
    weights_l = T.constant(rng.normal(size=n))
    weights_v = T.constant(rng.normal(size=(n, n)))

    def fn(x):
        sym = T.mul(T.add(x, T.transpose(x, (1, 0))), 0.5)
        basis = eigh_sym(sym, differentiate=True)
        return T.add(T.sum_(T.mul(basis.lambdas, weights_l)),
                     T.sum_(T.mul(basis.u, weights_v)))

    base = np.diag(np.linspace(2.0, 0.2, n))
    q, _ = np.linalg.qr(rng.normal(size=(n, n)))
    x = T.parameter(q @ base @ q.T)
    err = T.grad_check(fn, x, h=FD_STEP)
    return CheckResult("eigh_sym.backward", err, EIGH_TOL)


# Per-channel bias nudges that keep every rectifier input clear of zero
# at the check point below. The activations are piecewise linear, so a
# pre-activation within the stencil width of a kink makes the central
# difference measure the wrong one-sided slope; one cold-init channel sat
# 2e-7 from zero and polluted every strongly coupled parameter. Each
# offset centres that channel's values inside the widest kink-free window
# found at this seed (all offsets capped at 0.05, and the environment
# convolution ones backed off until the graph eigengap stayed open).
_BIAS_NUDGE = {
    "env.conv0.b": (0.020368, 0.05, -0.048146, -0.040378),
    "env.conv1.b": (-0.045147, 0.036688, -0.041894, 0.032877, 0.005569,
                    -0.032321),
    "env.conv2.b": (-0.011872, -0.011003, -0.001213, 0.010309, -0.012,
                    -0.011108),
    "dec.res0.b": (-0.045554, 0.039554, -0.05, -0.04255, 0.05),
    "dec.res1.b": (-0.02025, -0.013048, 0.05, -0.049524, -0.05),
    "dec.res2.b": (0.032231, -0.013361, 0.028715, -0.028854, 0.007563),
    "dec.res3.b": (-0.05, 0.032754, 0.026825, -0.026343, -0.045811),
    "dec.res4.b": (0.05, 0.05, -0.007405, 0.05, 0.05),
}


def _model_case(seed: int):
    """Full forecaster (every branch on) at gradcheck-friendly capacity.

    Geometry matches the reference check: 3 agents, 8 observed frames,
    12 forecast frames. Capacity knobs (n_max, embed width, raster size)
    are kept small so the per-element finite differencing finishes fast;
    every operation in the full model still executes.

    Finite differences only mean anything where the loss is locally
    smooth, so the raw cold-start parameter point will not do; the
    adjustments below move the check to a well-conditioned point without
    touching the code under test. All constants were tuned at seed 0.
    """
    cfg = ModelConfig(t_h=8, t_f=12, n_max=4, embed_dim=6,
                      env_channels=(4, 6, 6))
    params = init_params(cfg, seed)
    model = Forecaster(cfg, params)
    # cold init gives near-identical environment edge weights, i.e. a
    # near-complete graph with an almost-degenerate eigenpair where the
    # smoothed eigensolver backward and finite differences both break
    # down; spreading the embeddings opens the gap (6.6e-2 here)
    params["env.embed.w"].data *= 16.0
    # damp the decoder's horizon map so the Gaussian head starts near its
    # neutral point; the raw init's heavy tails saturate the correlation
    # channel and blow the likelihood up to ~1e5, which leaves central
    # differences with no significant bits to work with
    params["dec.horizon.w"].data *= 0.05
    # soften the rectifiers downstream of the spectral units: their kink
    # contribution scales with |slope - 1|, and branch selection is
    # already covered by the dedicated primitive check. The environment
    # convolutions must keep their sharp slope: the nonlinearity is what
    # separates node features, and near slope 1 the edge weights go
    # uniform and the graph spectrum degenerates exactly.
    for name, tensor in params.items():
        if name == "unit0.act" or (name.startswith("dec.")
                                   and name.endswith(".slope")):
            tensor.data[:] = 0.98
    for name, vec in _BIAS_NUDGE.items():
        params[name].data += np.asarray(vec)
    # smooth constant-velocity rollout: a wild scene inflates the loss
    # magnitude and the differences drown in cancellation
    rng = np.random.default_rng(13)
    starts = rng.uniform(4.0, 6.0, (3, 2))
    vel = rng.uniform(-0.15, 0.15, (3, 2))
    frames = np.arange(20, dtype=np.float64)[:, None, None]
    track = starts[None] + vel[None] * frames
    track = track + rng.normal(0.0, 0.03, track.shape)
    history, future = track[:8], track[8:]
    image = rng.uniform(0.0, 1.0, (12, 12))
    affine = np.array([[1.0, 0.0, 0.5], [0.0, 1.0, 0.5]])

    def loss_fn(_x=None):
        out = model.forward(history, image, affine)
        return loss_total(out.track, future)

    return model, loss_fn


def check_model(seed: int = 0) -> list[CheckResult]:
    """Gradcheck the training loss against every named parameter."""
    model, loss_fn = _model_case(seed)
    results = []
    for name, tensor in model.params.items():
        err = T.grad_check(lambda _x: loss_fn(), tensor, h=FD_STEP)
        results.append(CheckResult(f"model.{name}", err, MODEL_TOL))
    return results


def run_suite(seed: int = 0) -> list[CheckResult]:
    results = check_primitives(seed)
    results.append(check_eigensolver(seed))
    results.extend(check_model(seed))
    return results


def format_report(results) -> str:
    lines = [r.line() for r in results]
    worst = max(results, key=lambda r: r.max_error / r.tolerance)
    failed = sum(not r.passed for r in results)
    lines.append(f"{len(results) - failed}/{len(results)} checks passed; "
                 f"worst {worst.name} at {worst.max_error:.3e}")
    return "\n".join(lines)
