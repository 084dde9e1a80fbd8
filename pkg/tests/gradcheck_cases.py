"""Seeded nets and inputs for finite-difference gradient checks."""
import numpy as np

from alpe_lob.nn import DenseNet, DenseNetConfig

KINK_MARGIN = 1e-3


def _push_off_kinks(net: DenseNet, x: np.ndarray) -> None:
    """Shift biases so no hidden pre-activation lies within KINK_MARGIN of 0."""
    a = x[None, :]
    for i in range(net.n_layers - 1):
        b = net.p[f"b{i}"]
        z = a @ net.p[f"W{i}"].T + b
        near = np.abs(z[0]) < KINK_MARGIN
        b[near] += np.where(z[0][near] >= 0, 2 * KINK_MARGIN, -2 * KINK_MARGIN)
        a = np.maximum(a @ net.p[f"W{i}"].T + b, 0.0)
        if i == 0 and net.config.has_batchnorm:
            a = net.p["bn_scale"] * (a - net.running_mean) / np.sqrt(net.running_var + net.config.zeta) \
                + net.p["bn_shift"]


def make_case(n_layers: int, batchnorm: bool, seed: int, width: int = 64, input_dim: int = 12,
              n_checked: int = 300):
    """``n_layers`` counts affine layers (hidden layers + output)."""
    cfg = DenseNetConfig(input_dim=input_dim, hidden_layers=n_layers - 1, hidden_width=width,
                         use_batchnorm=batchnorm)
    net = DenseNet(cfg, seed=seed)
    rng = np.random.default_rng([seed, n_layers, int(batchnorm)])
    for i in range(net.n_layers):
        net.p[f"b{i}"][...] = rng.uniform(-0.1, 0.1, net.p[f"b{i}"].shape)
    if cfg.has_batchnorm:
        net.running_mean[...] = rng.uniform(0, 0.1, width)
        net.running_var[...] = rng.uniform(0.5, 1.5, width)
        net.p["bn_scale"][...] = rng.uniform(0.5, 1.5, width)
        net.p["bn_shift"][...] = rng.uniform(-0.1, 0.1, width)
    x = rng.uniform(0, 1, input_dim)
    _push_off_kinks(net, x)
    target = float(net.forward(x)) + 0.3
    idx = rng.choice(net.params.size, min(n_checked, net.params.size), replace=False)
    return net, x, target, idx


def case_grid(n_cases: int = 100):
    """Cycle depths 1/3/9 and batch norm on/off over distinct seeds."""
    for i in range(n_cases):
        yield [1, 3, 9][i % 3], bool((i // 3) % 2), i
