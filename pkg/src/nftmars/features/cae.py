"""Convolutional autoencoder that compresses 128x128x3 images to 64-dim codes."""
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..numerics import Adam, Tensor, conv2d, max_pool2d, mean, relu, sub, upsample2d
from ..numerics import tensor as T

log = logging.getLogger(__name__)

IMAGE_SHAPE = (128, 128, 3)
CODE_DIM = 64
# channel widths: encoder convs (each followed by 2x2 pooling), then the bottleneck conv
ENCODER = (3, 8, 8, 4, 4)
DECODER = (1, 4, 4, 8, 8)


def _conv_init(rng, cin, cout):
    a = np.sqrt(6.0 / (9 * cin + 9 * cout))
    return rng.uniform(-a, a, size=(3, 3, cin, cout))


@dataclass
class ImageEncoder:
    params: dict = field(repr=False)
    history: list = field(default_factory=list)
    final_mse: float | None = None

    @classmethod
    def init(cls, seed=0):
        rng = np.random.default_rng([seed, 7])
        p = {}
        for k, (a, b) in enumerate(zip(ENCODER[:-1], ENCODER[1:])):
            p[f"enc{k}"] = Tensor(_conv_init(rng, a, b), requires_grad=True)
            p[f"enc{k}_b"] = Tensor(np.zeros(b), requires_grad=True)
        p["code"] = Tensor(_conv_init(rng, ENCODER[-1], 1), requires_grad=True)
        p["code_b"] = Tensor(np.zeros(1), requires_grad=True)
        for k, (a, b) in enumerate(zip(DECODER[:-1], DECODER[1:])):
            p[f"dec{k}"] = Tensor(_conv_init(rng, a, b), requires_grad=True)
            p[f"dec{k}_b"] = Tensor(np.zeros(b), requires_grad=True)
        p["out"] = Tensor(_conv_init(rng, DECODER[-1], 3), requires_grad=True)
        p["out_b"] = Tensor(np.zeros(3), requires_grad=True)
        return cls(p)

    def _encode(self, x):
        p = self.params
        h = x
        for k in range(len(ENCODER) - 1):
            h = max_pool2d(relu(conv2d(h, p[f"enc{k}"], p[f"enc{k}_b"])))
        return conv2d(h, p["code"], p["code_b"])  # (n, 8, 8, 1), linear

    def _decode(self, z):
        p = self.params
        h = z
        for k in range(len(DECODER) - 1):
            h = upsample2d(relu(conv2d(h, p[f"dec{k}"], p[f"dec{k}_b"])))
        return conv2d(h, p["out"], p["out_b"])

    def reconstruct(self, images):
        return self._decode(self._encode(Tensor(check_images(images)))).data

    def mse(self, images):
        x = check_images(images)
        return float(np.mean((self.reconstruct(x) - x) ** 2))

    def encode(self, images):
        """Flattened 64-dim bottleneck codes, one row per image."""
        x = check_images(images)
        return self._encode(Tensor(x)).data.reshape(x.shape[0], CODE_DIM)


def check_images(images):
    x = np.asarray(images, dtype=np.float64)
    if x.ndim == 3:
        x = x[None]
    if x.ndim != 4 or x.shape[1:] != IMAGE_SHAPE:
        raise ValueError(f"images must have shape (n, 128, 128, 3), got {x.shape}")
    if x.shape[0] == 0:
        raise ValueError("empty image set")
    if not np.all(np.isfinite(x)):
        raise ValueError("images contain non-finite pixels")
    return x


def train_image_autoencoder(images, epochs=100, lr=0.01, batch_size=8, seed=0):
    """Fit the autoencoder by minibatch MSE.

    ``history[0]`` is the full-set MSE at initialization, ``history[e]`` the
    mean minibatch loss of epoch ``e``, and ``final_mse`` the full-set MSE after
    the last update.
    """
    x = check_images(images)
    enc = ImageEncoder.init(seed)
    opt = Adam(enc.params, lr=lr)
    rng = np.random.default_rng([seed, 8])
    enc.history.append(enc.mse(x))
    for epoch in range(epochs):
        order = rng.permutation(x.shape[0])
        total = 0.0
        for lo in range(0, x.shape[0], batch_size):
            sl = order[lo:lo + batch_size]
            xb = Tensor(x[sl])
            opt.zero_grad()
            diff = sub(enc._decode(enc._encode(xb)), xb)
            loss = mean(T.mul(diff, diff))
            loss.backward()
            opt.step()
            total += loss.item() * sl.size
        enc.history.append(total / x.shape[0])
        log.debug("cae epoch %d loss %.6f", epoch + 1, enc.history[-1])
    enc.final_mse = enc.mse(x)
    return enc


def load_images(manifest, directory=None):
    """Read a ``token_id,filename`` manifest and return (tokens, images in [0, 1])."""
    import pandas as pd
    from PIL import Image

    manifest = Path(manifest)
    directory = manifest.parent if directory is None else Path(directory)
    f = pd.read_csv(manifest, dtype=str)
    if list(f.columns[:2]) != ["token_id", "filename"]:
        raise ValueError(f"{manifest}: expected header token_id,filename")
    out = np.empty((len(f),) + IMAGE_SHAPE)
    for k, name in enumerate(f["filename"]):
        with Image.open(directory / name) as im:
            im = im.convert("RGB").resize(IMAGE_SHAPE[:2], Image.BILINEAR)
            out[k] = np.asarray(im, dtype=np.float64) / 255.0
    return list(f["token_id"]), out
