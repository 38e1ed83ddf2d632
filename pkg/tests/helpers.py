"""Finite-difference oracle shared by the gradient tests."""

import numpy as np

from trr_snn.autograd import Tensor, default_dtype, mul, sum_all


def numeric_grad(fn, arrays, eps=1e-3):
    """Central differences of scalar ``fn(*tensors)`` w.r.t. each array, in float64."""
    grads = []
    with default_dtype(np.float64):
        for k, arr in enumerate(arrays):
            g = np.zeros_like(arr, dtype=np.float64)
            flat = arr.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                up = fn(*[Tensor(a) for a in arrays]).item()
                flat[i] = orig - eps
                down = fn(*[Tensor(a) for a in arrays]).item()
                flat[i] = orig
                g.reshape(-1)[i] = (up - down) / (2 * eps)
            grads.append(g)
    return grads


def autodiff_grad(fn, arrays):
    with default_dtype(np.float64):
        tensors = [Tensor(a, requires_grad=True) for a in arrays]
        fn(*tensors).backward()
        return [t.grad for t in tensors]


def weighted_sum(t, weights):
    """Scalar probe ``sum(t * weights)`` so every output element matters."""
    return sum_all(mul(t, Tensor(weights)))


def _rng(seed=0):
    return np.random.default_rng(seed)


def op_cases():
    """``(name, fn, arrays)`` for every differentiable primitive.

    Each ``fn`` maps tensors to a scalar via a fixed random projection.
    Inputs avoid kinks (log-softmax is smooth; the LIF ramp is checked in
    its own test away from the ramp corners).
    """
    from trr_snn import autograd as ag
    from trr_snn.losses import consistency_loss, cross_entropy
    r = _rng(7)
    w = lambda *shape: r.normal(size=shape)  # noqa: E731
    cases = []
    a, b = w(3, 4), w(3, 4)
    pa, pb = w(3, 4), w(3, 4)
    cases.append(("add", lambda x, y: weighted_sum(ag.add(x, y), pa), [a, b]))
    cases.append(("sub", lambda x, y: weighted_sum(ag.sub(x, y), pa), [a.copy(), b.copy()]))
    cases.append(("mul", lambda x, y: weighted_sum(ag.mul(x, y), pb), [a.copy(), b.copy()]))
    cases.append(("scale", lambda x: weighted_sum(ag.scale(x, -1.7), pa), [a.copy()]))
    cases.append(("exp", lambda x: weighted_sum(ag.exp(x), pa), [a.copy() * 0.5]))
    cases.append(("reshape", lambda x: weighted_sum(ag.reshape(x, (4, 3)), pa.reshape(4, 3)), [a.copy()]))
    cases.append(("sum_all", lambda x: ag.scale(ag.sum_all(x), 0.3), [a.copy()]))
    t5 = w(5, 2, 3)
    p23 = w(2, 3)
    cases.append(("mean_over_axis", lambda x: weighted_sum(ag.mean_over_axis(x, 0), p23), [t5]))
    p523 = w(5, 2, 3)
    cases.append(("flip", lambda x: weighted_sum(ag.flip(x, 0), p523), [t5.copy()]))
    cases.append(("permute_axis0", lambda x: weighted_sum(ag.permute_axis0(x, [3, 0, 4, 1, 2]), p523),
                  [t5.copy()]))
    p2223 = w(2, 2, 2, 3)
    cases.append(("repeat_axis0", lambda x: weighted_sum(ag.repeat_axis0(x, 2), p2223), [w(2, 2, 3)]))
    p_lin = w(4, 5)
    cases.append(("linear", lambda x, wt, bias: weighted_sum(ag.linear(x, wt, bias), p_lin),
                  [w(4, 3), w(5, 3), w(5)]))
    p_conv = w(2, 3, 5, 5)
    cases.append(("conv2d", lambda x, k: weighted_sum(ag.conv2d(x, k, 1, 1), p_conv), [w(2, 2, 5, 5), w(3, 2, 3, 3)]))
    p_conv_s = w(1, 2, 2, 2)
    cases.append(("conv2d_stride2", lambda x, k: weighted_sum(ag.conv2d(x, k, 2, 0), p_conv_s),
                  [w(1, 1, 5, 5), w(2, 1, 3, 3)]))
    p_pool = w(2, 3, 2, 2)
    cases.append(("avg_pool2d", lambda x: weighted_sum(ag.avg_pool2d(x, 2), p_pool), [w(2, 3, 4, 4)]))
    p_aff = w(2, 3, 2, 2)
    cases.append(("channel_affine", lambda x, s, sh: weighted_sum(ag.channel_affine(x, s, sh), p_aff),
                  [w(2, 3, 2, 2), w(3), w(3)]))
    cases.append(("log_softmax", lambda x: weighted_sum(ag.log_softmax(x, axis=1), pa), [a.copy()]))
    labels = np.array([0, 3, 1])
    cases.append(("cross_entropy", lambda x: cross_entropy(x, labels), [a.copy()]))
    cases.append(("consistency_loss", lambda x, y: consistency_loss(x, y, 2.0), [a.copy(), b.copy()]))
    return cases


def smoothed_model_case(seed=0):
    """Tiny smoothed VGG-mini and a loss through all three TRR outputs."""
    from trr_snn.losses import TrrLossWeights, trr_total_loss
    from trr_snn.models import ModelConfig, SnnModel
    cfg = ModelConfig(height=8, width=8, T=3, num_classes=4, width_divisor=64, init_scale=5.0)
    with default_dtype(np.float64):
        model = SnnModel(cfg, seed=seed)
    model.set_smooth(True)
    r = _rng(seed + 1)
    x = r.random((3, 2, 2, 8, 8))
    labels = np.array([1, 3])
    return model, x, labels, TrrLossWeights(alpha=0.5, t_tem=2.0), trr_total_loss


# -- straight-line numpy reference of the network ------------------------------

def ref_conv3x3(x, w):
    """Same-padded 3x3 cross-correlation by explicit kernel-offset sums. ``x[N,C,H,W]``."""
    n, c, h, wd = x.shape
    pad = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    out = np.zeros((n, w.shape[0], h, wd))
    for i in range(3):
        for j in range(3):
            out += np.einsum("nchw,oc->nohw", pad[:, :, i:i + h, j:j + wd], w[:, :, i, j])
    return out


def ref_lif(currents, tau=2.0, threshold=1.0):
    h = np.zeros(currents.shape[1:])
    out = np.zeros_like(currents)
    for t in range(currents.shape[0]):
        h = (1 - 1 / tau) * h + currents[t]
        out[t] = h >= threshold
        h = h - out[t] * threshold
    return out


def ref_stages(model, seq, start, stop):
    """Run ``seq[T,B,C,H,W]`` through stages ``start..stop-1`` using only numpy."""
    x = np.asarray(seq, dtype=np.float64)
    for s in range(start, stop):
        stage = model.stages[s]
        for layer in stage.layers:
            T, B = x.shape[:2]
            y = ref_conv3x3(x.reshape((T * B,) + x.shape[2:]), layer.weight.data.astype(np.float64))
            y = y * layer.scale.data[None, :, None, None] + layer.shift.data[None, :, None, None]
            x = ref_lif(y.reshape((T, B) + y.shape[1:]), model.config.tau, model.config.threshold)
        if stage.pool:
            T, B, C, H, W = x.shape
            x = x.reshape(T, B, C, H // 2, 2, W // 2, 2).mean(axis=(4, 6))
    return x


def ref_hybrid_logits(model, x, mode):
    """``fc(gap(rate(F) * rate(F_rev)))`` with the reversal placed as in the training pass."""
    if mode == "temporal":
        seq = np.asarray(x, dtype=np.float64)
        feats = ref_stages(model, seq, 0, model.num_stages)
        feats_rev = ref_stages(model, seq[::-1], 0, model.num_stages)
    else:
        seq = np.repeat(np.asarray(x, dtype=np.float64)[None], model.T, axis=0)
        loc = model.reversal_location
        enc = ref_stages(model, seq, 0, loc)
        feats = ref_stages(model, enc, loc, model.num_stages)
        feats_rev = ref_stages(model, enc[::-1], loc, model.num_stages)
    hybrid = feats.mean(axis=0) * feats_rev.mean(axis=0)
    pooled = hybrid.mean(axis=(2, 3))
    return pooled @ model.fc_weight.data.T + model.fc_bias.data


def model_gradcheck(seed=0, per_param=3, eps=1e-6):
    """Autodiff vs central differences on sampled coordinates of every parameter.

    Returns ``(name, analytic, numeric)`` triples. The loss runs through all
    three TRR outputs of a smoothed tiny VGG-mini in float64.
    """
    model, x, labels, weights, loss_fn = smoothed_model_case(seed)

    def loss():
        return loss_fn(model.forward_trr(x, "temporal"), labels, weights)[0]

    results = []
    with default_dtype(np.float64):
        model.zero_grad()
        loss().backward()
        r = _rng(seed + 2)
        for name, p in model.named_parameters():
            flat = p.data.reshape(-1)
            for i in r.choice(flat.size, size=min(per_param, flat.size), replace=False):
                orig = flat[i]
                flat[i] = orig + eps
                up = loss().item()
                flat[i] = orig - eps
                down = loss().item()
                flat[i] = orig
                results.append((f"{name}[{i}]", float(p.grad.reshape(-1)[i]), (up - down) / (2 * eps)))
    return results


def tiny_setup(kind="moving_bar", samples_per_class=5, T=4):
    """Small dataset plus matching model config for fast training tests."""
    from trr_snn.data import SyntheticDatasetSpec, generate_synthetic
    from trr_snn.models import ModelConfig
    spec = SyntheticDatasetSpec(kind=kind, samples_per_class=samples_per_class, T=T, height=8, width=8,
                                test_fraction=0.2, seed=11)
    train_set, test_set = generate_synthetic(spec)
    return train_set, test_set, ModelConfig(height=8, width=8, T=T, width_divisor=32)


def vanilla_train(model, data, epochs, batch_size, lr, momentum, weight_decay, seed, calibrate=None):
    """Plain SGD-momentum / cross-entropy loop written without the training module."""
    from trr_snn.losses import cross_entropy
    if calibrate is not None:
        picks, mean, std = calibrate
        model.calibrate(data.batch_input(picks), "temporal", mean, std)
    params = model.parameters()
    velocity = [np.zeros_like(p.data) for p in params]
    f = np.float32
    order_rng = np.random.default_rng(seed)
    losses = []
    first = True
    for _ in range(epochs):
        order = order_rng.permutation(len(data))
        for start in range(0, len(order), batch_size):
            idx = order[start:start + batch_size]
            x = np.ascontiguousarray(data.x[idx].transpose(1, 0, 2, 3, 4))
            loss = cross_entropy(model.forward_plain(x, "temporal"), data.y[idx])
            losses.append(loss.item())
            for p in params:
                p.grad = None
            loss.backward()
            for i, p in enumerate(params):
                g = p.grad + p.data * f(weight_decay)
                velocity[i] = g if first else velocity[i] * f(momentum) + g
                p.data = p.data - velocity[i] * f(lr)
            first = False
    return losses
