import numpy as np
import pytest

from fusetrack.nnet import (
    BilinearResize,
    Conv2D,
    Deconv2D,
    LRN,
    Network,
    ReLU,
    ShapeMismatchError,
    Sigmoid,
    grad_check,
    load_checkpoint,
    save_checkpoint,
)

RNG = lambda s: np.random.default_rng(s)


def test_conv_identity_kernel():
    conv = Conv2D(1, 1, 1, 1, rng=RNG(0))
    conv.w[...] = 1.0
    conv.b[...] = 0.0
    x = RNG(1).random((1, 5, 5))
    np.testing.assert_allclose(conv.forward(x), x)


def test_conv_known_sum():
    conv = Conv2D(3, 3, 1, 1, stride=1, pad=0, rng=RNG(0))
    conv.w[...] = 1.0
    conv.b[...] = 0.0
    x = np.ones((1, 4, 4))
    out = conv.forward(x)
    assert out.shape == (1, 2, 2)
    np.testing.assert_allclose(out, 9.0)


def test_conv_stride_pad_shapes():
    conv = Conv2D(3, 3, 2, 4, stride=2, pad=1, rng=RNG(0))
    assert conv.out_shape((2, 8, 8)) == (4, 4, 4)
    out = conv.forward(RNG(2).random((2, 8, 8)))
    assert out.shape == (4, 4, 4)


def test_deconv_inverts_conv_shape():
    de = Deconv2D(3, 3, 4, 2, stride=2, pad=1)
    # transpose of the stride-2 pad-1 conv mapping 9x9 -> 5x5
    assert de.out_shape((4, 5, 5)) == (2, 9, 9)
    out = de.forward(RNG(3).random((4, 5, 5)))
    assert out.shape == (2, 9, 9)


def test_relu_halfspace():
    x = np.array([[-2.0, 0.0, 3.0]])[None]
    np.testing.assert_array_equal(ReLU().forward(x), [[[0.0, 0.0, 3.0]]])


def test_sigmoid_bounds_and_midpoint():
    s = Sigmoid()
    out = s.forward(np.array([[[0.0, 100.0, -100.0]]]))
    np.testing.assert_allclose(out[0, 0], [0.5, 1.0, 0.0], atol=1e-12)
    mid = s.forward(RNG(4).standard_normal((1, 4, 4)))
    assert (mid > 0).all() and (mid < 1).all()


def test_lrn_constant_input():
    lrn = LRN(n=5, alpha=1e-4, beta=0.75, k=2.0)
    x = np.ones((8, 3, 3))
    out = lrn.forward(x)
    # interior channels see a full 5-wide neighborhood of ones and the
    # alpha/n scaling gives denom (k + alpha)^beta
    denom = (2.0 + 1e-4) ** 0.75
    np.testing.assert_allclose(out[2:6], 1.0 / denom)


def test_bilinear_resize_layer_matches_constant():
    br = BilinearResize(9, 9)
    x = np.full((2, 25, 25), 0.7)
    np.testing.assert_allclose(br.forward(x), 0.7)


def test_shape_mismatch_names_layer():
    net = Network([Conv2D(3, 3, 2, 4, rng=RNG(0)), ReLU()])
    with pytest.raises(ShapeMismatchError, match="layer 0"):
        net.forward(np.zeros((3, 8, 8)))


class TestGradients:
    """Central-difference checks per layer and for a composed stack."""

    def _check(self, layers, in_shape, seed=0, tol=1e-6):
        net = Network(layers)
        x = RNG(seed).standard_normal(in_shape)
        err = grad_check(net, x, eps=1e-4, seed=seed)
        assert err < tol

    def test_conv(self):
        self._check([Conv2D(3, 3, 2, 3, stride=1, pad=1, rng=RNG(10))], (2, 6, 6))

    def test_conv_strided(self):
        self._check([Conv2D(3, 3, 1, 2, stride=2, pad=1, rng=RNG(11))], (1, 8, 8))

    def test_deconv(self):
        self._check([Deconv2D(3, 3, 3, 2, stride=2, pad=1, rng=RNG(12))], (3, 4, 4))

    def test_relu(self):
        # keep inputs away from the kink at 0
        net = Network([ReLU()])
        x = RNG(13).standard_normal((2, 5, 5))
        x[np.abs(x) < 0.05] = 0.5
        assert grad_check(net, x, eps=1e-4) < 1e-6

    def test_sigmoid(self):
        self._check([Sigmoid()], (1, 4, 4), seed=14)

    def test_lrn(self):
        net = Network([LRN()])
        x = 1.0 + 0.1 * RNG(15).standard_normal((6, 4, 4))
        assert grad_check(net, x, eps=1e-4) < 1e-6

    def test_bilinear_resize(self):
        self._check([BilinearResize(7, 7)], (2, 5, 5), seed=16)

    def test_composed_stack(self):
        layers = [
            Conv2D(3, 3, 2, 4, stride=2, pad=1, rng=RNG(17)),
            ReLU(),
            LRN(),
            Deconv2D(3, 3, 4, 2, stride=2, pad=1, rng=RNG(18)),
            BilinearResize(6, 6),
            Sigmoid(),
        ]
        self._check(layers, (2, 8, 8), seed=19, tol=1e-5)


def test_sgd_momentum_hand_recurrence():
    conv = Conv2D(1, 1, 1, 1, rng=RNG(0))
    conv.w[...] = 0.0
    conv.b[...] = 0.0
    net = Network([conv])
    # force g=1 on every parameter, lr=0.1, momentum=0.9, wd=0:
    # v1=-0.1, theta1=-0.1; v2=0.9*(-0.1)-0.1=-0.19, theta2=-0.29
    for g in net.grads():
        g[...] = 1.0
    net.sgd_step(lr=0.1, momentum=0.9)
    assert conv.w.flat[0] == pytest.approx(-0.1)
    for g in net.grads():
        g[...] = 1.0
    net.sgd_step(lr=0.1, momentum=0.9)
    assert conv.w.flat[0] == pytest.approx(-0.29)


def test_frozen_network_never_moves():
    conv = Conv2D(3, 3, 1, 1, stride=1, pad=1, rng=RNG(20))
    net = Network([conv], frozen=True)
    before = conv.w.copy()
    net.forward(RNG(21).random((1, 5, 5)))
    net.backward(np.ones((1, 5, 5)))
    net.sgd_step(lr=1.0)
    np.testing.assert_array_equal(conv.w, before)


def test_checkpoint_round_trip(tmp_path):
    layers = [Conv2D(3, 3, 2, 4, stride=2, pad=1, rng=RNG(22)), ReLU(),
              Deconv2D(3, 3, 4, 1, rng=RNG(23)), Sigmoid()]
    net = Network(layers)
    p = tmp_path / "net.bin"
    save_checkpoint(p, net)
    twin = Network([Conv2D(3, 3, 2, 4, stride=2, pad=1, rng=RNG(99)), ReLU(),
                    Deconv2D(3, 3, 4, 1, rng=RNG(98)), Sigmoid()])
    load_checkpoint(p, twin)
    x = RNG(24).random((2, 8, 8))
    # parameters round-trip through float32 storage
    np.testing.assert_allclose(net.forward(x), twin.forward(x), atol=1e-6)


def test_checkpoint_rejects_wrong_architecture(tmp_path):
    net = Network([Conv2D(3, 3, 1, 2, rng=RNG(25))])
    p = tmp_path / "net.bin"
    save_checkpoint(p, net)
    other = Network([Conv2D(5, 5, 1, 2, rng=RNG(26))])
    with pytest.raises(Exception):
        load_checkpoint(p, other)


def test_checkpoint_magic(tmp_path):
    net = Network([ReLU()])
    p = tmp_path / "net.bin"
    save_checkpoint(p, net)
    assert p.read_bytes()[:4] == b"MFN1"
