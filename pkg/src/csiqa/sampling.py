"""Compressed sampling of image blocks with a learnable, truncatable matrix.

An image is split into non-overlapping B x B blocks; each flattened block is
multiplied by the first ceil(ratio * B^2) rows of a learnable B^2 x B^2 base
matrix, yielding one short measurement vector per block. A small
reconstruction network (linear per-block expansion plus a 3-layer
convolutional refiner) supports pretraining the matrix on a corpus so it
starts from a reconstruction-aware initialization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import numerics as nm
from .errors import ContractError, ShapeError
from .gridops import block_pixel_index, conv3x3

# Guard against float fuzz like 0.3*100 = 30.000000000000004 before ceiling.
_RATIO_FUZZ = 1e-9


def measurement_count(block_size: int, ratio: float) -> int:
    """Rows kept when truncating at ``ratio``: ceil(ratio * B^2), min 1."""
    if not 0.0 < ratio <= 1.0:
        raise ContractError(f"sampling ratio must be in (0, 1], got {ratio}")
    return max(1, math.ceil(ratio * block_size * block_size - _RATIO_FUZZ))


@dataclass(frozen=True)
class BlockGrid:
    """Geometry of the non-overlapping block decomposition."""

    blocks_h: int
    blocks_w: int
    block_size: int

    @property
    def num_blocks(self) -> int:
        return self.blocks_h * self.blocks_w

    @property
    def padded_shape(self) -> tuple[int, int]:
        return (self.blocks_h * self.block_size, self.blocks_w * self.block_size)


@dataclass
class SamplingMatrix:
    """Learnable square base matrix whose row prefixes are the samplers."""

    matrix: nm.Tensor
    block_size: int

    def __post_init__(self):
        side = self.block_size * self.block_size
        if self.matrix.shape != (side, side):
            raise ShapeError(
                f"sampling matrix must be {side}x{side} for block size "
                f"{self.block_size}, got {self.matrix.shape}")


@dataclass
class MeasurementSet:
    """Per-block measurement vectors stacked into an (L, m) tensor."""

    values: nm.Tensor
    grid: BlockGrid
    ratio: float

    @property
    def measurement_length(self) -> int:
        return self.values.shape[1]

    @property
    def total_scalars(self) -> int:
        return self.values.size


def random_sampling_matrix(block_size: int, rng: np.random.Generator) -> SamplingMatrix:
    """Orthogonalized Gaussian rows scaled by 1/B.

    Orthonormal rows keep every truncation prefix well conditioned.
    """
    side = block_size * block_size
    raw = rng.normal(size=(side, side))
    q, _ = np.linalg.qr(raw)
    return SamplingMatrix(nm.Tensor(q.T / block_size, requires_grad=True), block_size)


def gaussian_sampling_matrix(block_size: int, rng: np.random.Generator) -> SamplingMatrix:
    """Plain i.i.d. Gaussian matrix at the same row scale; baseline only."""
    side = block_size * block_size
    raw = rng.normal(scale=1.0 / block_size, size=(side, side))
    return SamplingMatrix(nm.Tensor(raw, requires_grad=True), block_size)


def pad_to_blocks(img: np.ndarray, block_size: int) -> np.ndarray:
    """Reflect-pad bottom/right so both extents are multiples of B."""
    if block_size <= 0:
        raise ContractError(f"block size must be positive, got {block_size}")
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise ShapeError(f"expected a single-channel 2-D image, got shape {img.shape}")
    h, w = img.shape
    ph = (-h) % block_size
    pw = (-w) % block_size
    if ph == 0 and pw == 0:
        return img
    mode = "reflect" if min(h, w) > 1 else "edge"
    return np.pad(img, ((0, ph), (0, pw)), mode=mode)


def split_blocks(img: np.ndarray, block_size: int) -> tuple[np.ndarray, BlockGrid]:
    """Split (padding first if needed) into row-major flattened blocks.

    Returns an (L, B^2) array whose rows are the blocks in scan order, with
    each block flattened row-major, plus the grid geometry.
    """
    padded = pad_to_blocks(img, block_size)
    h, w = padded.shape
    b = block_size
    grid = BlockGrid(h // b, w // b, b)
    blocks = (
        padded.reshape(grid.blocks_h, b, grid.blocks_w, b)
        .transpose(0, 2, 1, 3)
        .reshape(grid.num_blocks, b * b)
    )
    return np.ascontiguousarray(blocks), grid


def merge_blocks(blocks: np.ndarray, grid: BlockGrid) -> np.ndarray:
    """Inverse of split_blocks over the padded image."""
    b = grid.block_size
    if blocks.shape != (grid.num_blocks, b * b):
        raise ShapeError(f"expected {(grid.num_blocks, b * b)} blocks, got {blocks.shape}")
    return (
        blocks.reshape(grid.blocks_h, grid.blocks_w, b, b)
        .transpose(0, 2, 1, 3)
        .reshape(grid.padded_shape)
    )


def truncate(sm: SamplingMatrix, ratio: float) -> nm.Tensor:
    """First ceil(ratio * B^2) rows of the base matrix, unchanged."""
    m = measurement_count(sm.block_size, ratio)
    return nm.slice_rows(sm.matrix, 0, m)


def sample(sm: SamplingMatrix, img: np.ndarray, ratio: float) -> MeasurementSet:
    """Measure every block with the truncated matrix; differentiable in it.

    Computed as the full-matrix product followed by a column slice so that
    measurements at a smaller ratio are bitwise a prefix of those at any
    larger ratio (the truncated-multiply order would leave that to BLAS
    rounding).
    """
    m = measurement_count(sm.block_size, ratio)
    blocks, grid = split_blocks(img, sm.block_size)
    full = nm.matmul(nm.Tensor(blocks), nm.transpose(sm.matrix))
    y = nm.slice_cols(full, 0, m) if m < full.shape[1] else full
    return MeasurementSet(y, grid, ratio)


def sample_conv(sm: SamplingMatrix, img: np.ndarray, ratio: float) -> MeasurementSet:
    """Same measurements via a stride-B convolution.

    Each kept row of the matrix, reshaped B x B, slides over the padded
    image with stride B; this is the verification/acceleration route and is
    not recorded on the tape.
    """
    b = sm.block_size
    m = measurement_count(b, ratio)
    padded = pad_to_blocks(img, b)
    grid = BlockGrid(padded.shape[0] // b, padded.shape[1] // b, b)
    kernels = sm.matrix.data[:m].reshape(m, b, b)
    windows = np.lib.stride_tricks.sliding_window_view(padded, (b, b))[::b, ::b]
    y = np.einsum("ghuv,muv->ghm", windows, kernels, optimize=True)
    return MeasurementSet(nm.Tensor(y.reshape(grid.num_blocks, m)), grid, ratio)


# ---------------------------------------------------------------------------
# Reconstruction network for pretraining the sampling matrix
# ---------------------------------------------------------------------------

@dataclass
class CsnetReconstructor:
    """Linear per-block expansion plus a 3-layer convolutional refiner.

    The final refiner layer is zero-initialized, so the network starts as
    the pure linear reconstruction (an identity residual).
    """

    block_size: int
    ratio: float
    width: int
    params: dict[str, nm.Tensor] = field(default_factory=dict)

    @property
    def measurement_length(self) -> int:
        return measurement_count(self.block_size, self.ratio)


def init_reconstructor(
    block_size: int, ratio: float, rng: np.random.Generator, width: int = 16
) -> CsnetReconstructor:
    m = measurement_count(block_size, ratio)
    side = block_size * block_size

    def weight(fan_in, shape):
        return nm.Tensor(rng.normal(scale=math.sqrt(1.0 / fan_in), size=shape),
                         requires_grad=True)

    params = {
        "init.w": weight(m, (m, side)),
        "init.b": nm.Tensor(np.zeros(side), requires_grad=True),
        "conv1.w": weight(9, (9 * 1, width)),
        "conv1.b": nm.Tensor(np.zeros(width), requires_grad=True),
        "conv2.w": weight(9 * width, (9 * width, width)),
        "conv2.b": nm.Tensor(np.zeros(width), requires_grad=True),
        "conv3.w": nm.Tensor(np.zeros((9 * width, 1)), requires_grad=True),
        "conv3.b": nm.Tensor(np.zeros(1), requires_grad=True),
    }
    return CsnetReconstructor(block_size, ratio, width, params)


def csnet_reconstruct(rec: CsnetReconstructor, meas: MeasurementSet) -> nm.Tensor:
    """Reconstruct the padded image from measurements; fully differentiable."""
    if meas.grid.block_size != rec.block_size:
        raise ContractError(
            f"reconstructor block size {rec.block_size} vs measurements "
            f"{meas.grid.block_size}")
    if meas.measurement_length != rec.measurement_length:
        raise ContractError(
            f"reconstructor expects {rec.measurement_length} measurements per block, "
            f"got {meas.measurement_length}")
    grid = meas.grid
    h, w = grid.padded_shape
    p = rec.params
    blocks_hat = nm.affine(meas.values, p["init.w"], p["init.b"])
    flat = nm.reshape(blocks_hat, (blocks_hat.size, 1))
    pixels = nm.gather_rows(
        flat, block_pixel_index(grid.blocks_h, grid.blocks_w, grid.block_size))
    x = nm.relu(conv3x3(pixels, h, w, p["conv1.w"], p["conv1.b"]))
    x = nm.relu(conv3x3(x, h, w, p["conv2.w"], p["conv2.b"]))
    residual = conv3x3(x, h, w, p["conv3.w"], p["conv3.b"])
    return nm.reshape(nm.add(pixels, residual), (h, w))


def pretrain_csm(
    corpus: list[np.ndarray],
    ratio: float,
    epochs: int,
    lr: float,
    block_size: int = 4,
    width: int = 16,
    seed: int = 0,
    matrix: SamplingMatrix | None = None,
    train_matrix: bool = True,
) -> tuple[SamplingMatrix, CsnetReconstructor, list[float]]:
    """Jointly fit the sampling matrix and reconstructor by Adam on MSE.

    One full-batch step per epoch over the whole corpus. Returns the trained
    pieces plus the per-epoch loss trajectory (loss before each step). Pass
    ``train_matrix=False`` to keep the matrix frozen (baseline comparisons).
    """
    if not corpus:
        raise ContractError("pretraining corpus is empty")
    # separate streams so paired runs share the reconstructor init exactly,
    # whether or not a frozen matrix is supplied
    matrix_rng = np.random.default_rng(np.random.SeedSequence([seed, 11, 0]))
    recon_rng = np.random.default_rng(np.random.SeedSequence([seed, 11, 1]))
    if matrix is None:
        matrix = random_sampling_matrix(block_size, matrix_rng)
    if matrix.block_size != block_size:
        raise ContractError(
            f"matrix block size {matrix.block_size} != requested {block_size}")
    rec = init_reconstructor(block_size, ratio, recon_rng, width=width)
    matrix.matrix.requires_grad = bool(train_matrix)
    params = ([matrix.matrix] if train_matrix else []) + list(rec.params.values())
    state = nm.AdamState()
    losses: list[float] = []
    images = [np.asarray(im, dtype=np.float64) for im in corpus]
    for _ in range(epochs):
        for t in params:
            t.zero_grad()
        with nm.GradTape() as tape:
            total = nm.Tensor(0.0)
            for im in images:
                target = pad_to_blocks(im, block_size)
                recon = csnet_reconstruct(rec, sample(matrix, im, ratio))
                diff = nm.sub(recon, nm.Tensor(target))
                total = nm.add(total, nm.mean_all(nm.mul(diff, diff)))
            loss = nm.scale(total, 1.0 / len(images))
        losses.append(loss.item())
        tape.backward(loss)
        grads = [t.grad for t in params]
        nm.adam_step(params, grads, state, lr=lr)
    matrix.matrix.requires_grad = True
    return matrix, rec, losses


def reconstruction_mse(
    matrix: SamplingMatrix, rec: CsnetReconstructor, corpus: list[np.ndarray], ratio: float
) -> float:
    """Mean reconstruction MSE of a (matrix, reconstructor) pair on a corpus."""
    total = 0.0
    for im in corpus:
        target = pad_to_blocks(np.asarray(im, dtype=np.float64), rec.block_size)
        recon = csnet_reconstruct(rec, sample(matrix, im, ratio))
        total += float(np.mean((recon.data - target) ** 2))
    return total / len(corpus)
