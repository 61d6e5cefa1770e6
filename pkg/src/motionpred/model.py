"""Graph-convolutional trajectory predictor with an optional variational branch.

The discriminative path maps a K x M block of per-joint frequency
coefficients through an input graph-convolutional layer (GCL), a stack of
residual graph-convolutional blocks (GCBs), and an output GCL, then adds
the input back through a global skip connection. Each GCL computes
S @ A @ W + b with a learnable dense joint-mixing matrix S. Each GCB is two
GCL -> batchnorm -> tanh -> dropout stacks plus a residual connection.

The variational branch shares the first `recognition_blocks` GCBs of the
trunk as its recognition model, maps the tapped activation through a fully
connected bottleneck to per-joint Gaussian latent parameters, and decodes a
reparameterized sample through its own GCB stack to a Gaussian
reconstruction of the coefficient block (mean and log-variance heads). Log
variances are clamped to [-20, 3] everywhere they are produced. Once
trained, prediction needs only the discriminative path.

All forwards take a leading batch axis: activations are (B, K, features).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad

LOG_VAR_MIN = -20.0
LOG_VAR_MAX = 3.0


def seed_streams(seed: int) -> dict:
    """Independent, deterministically derived RNG streams for one run.

    Separate streams per concern keep the discriminative path's draws
    identical whether or not the variational branch is present, which is
    what makes the lambda=0 parity with a plain model bit-exact.
    """
    names = ("init_disc", "init_vae", "dropout_disc", "dropout_vae", "eps", "shuffle")
    children = np.random.SeedSequence(seed).spawn(len(names))
    return {name: np.random.default_rng(child) for name, child in zip(names, children)}


@dataclass
class ModelConfig:
    nodes: int                      # K, rows of every activation
    input_width: int                # retained coefficients per joint (M)
    seq_len: int                    # full trajectory length reconstructed by the decoder
    hidden: int = 256
    blocks: int = 12
    p_drop: float = 0.3
    with_vae: bool = True
    latent_width: int = 8           # n_z per joint
    recognition_blocks: int | None = None   # trunk depth shared with the recognizer
    decoder_blocks: int | None = None
    bn_momentum: float = 0.1

    def __post_init__(self):
        if self.nodes < 1 or self.hidden < 1 or self.blocks < 1:
            raise ValueError("nodes, hidden and blocks must all be >= 1")
        if not 1 <= self.input_width <= self.seq_len:
            raise ValueError(
                f"input_width must be in [1, seq_len={self.seq_len}], got {self.input_width}")
        if not 0.0 <= self.p_drop < 1.0:
            raise ValueError(f"p_drop must be in [0, 1), got {self.p_drop}")
        if self.latent_width < 1:
            raise ValueError("latent_width must be >= 1")
        if self.recognition_blocks is None:
            self.recognition_blocks = max(1, self.blocks // 2)
        if self.decoder_blocks is None:
            self.decoder_blocks = max(1, self.blocks // 2)
        if not 1 <= self.recognition_blocks <= self.blocks:
            raise ValueError("recognition_blocks must be in [1, blocks]")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class ModelOutput:
    """Everything one forward pass produces; branch fields are None when the
    variational branch was not run."""

    dct_out: ad.Tensor
    trunk_tap: ad.Tensor | None = None
    latent_mu: ad.Tensor | None = None
    latent_log_var: ad.Tensor | None = None
    z: ad.Tensor | None = None
    recon_mu: ad.Tensor | None = None
    recon_log_var: ad.Tensor | None = None


def _uniform_init(rng, shape, bound):
    if rng is None:
        return np.zeros(shape)
    return rng.uniform(-bound, bound, size=shape)


class GraphConvLayer:
    """S @ A @ W + b with learnable joint mixing S and feature map W."""

    def __init__(self, name, nodes, n_in, n_out, rng=None):
        self.name = name
        self.S = ad.Tensor(_uniform_init(rng, (nodes, nodes), 1.0 / np.sqrt(nodes)),
                           requires_grad=True, name=f"{name}.S")
        self.W = ad.Tensor(_uniform_init(rng, (n_in, n_out), 1.0 / np.sqrt(n_in)),
                           requires_grad=True, name=f"{name}.W")
        self.b = ad.Tensor(np.zeros(n_out), requires_grad=True, name=f"{name}.b")

    def __call__(self, a):
        return ad.add(ad.matmul(ad.matmul(self.S, a), self.W), self.b)

    def params(self):
        return [self.S, self.W, self.b]


class BatchNorm:
    """Per-(joint, channel) batch normalization over the batch axis."""

    def __init__(self, name, nodes, width, momentum=0.1):
        self.name = name
        self.gamma = ad.Tensor(np.ones((nodes, width)), requires_grad=True,
                               name=f"{name}.gamma")
        self.beta = ad.Tensor(np.zeros((nodes, width)), requires_grad=True,
                              name=f"{name}.beta")
        self.running_mean = np.zeros((nodes, width))
        self.running_var = np.ones((nodes, width))
        self.momentum = momentum

    def __call__(self, x, training):
        return ad.batchnorm(x, self.gamma, self.beta, self.running_mean,
                            self.running_var, training, momentum=self.momentum)

    def params(self):
        return [self.gamma, self.beta]

    def buffers(self):
        return [(f"{self.name}.running_mean", self.running_mean),
                (f"{self.name}.running_var", self.running_var)]


def _stack(gcl, bn, x, training, p_drop, rng):
    """GCL -> batchnorm -> tanh -> dropout, the unit both block halves use."""
    h = ad.tanh(bn(gcl(x), training))
    if training and p_drop > 0.0:
        mask = ad.dropout_mask(rng, h.shape, p_drop)
        if mask is not None:
            h = ad.mul(h, mask)
    return h


class GraphConvBlock:
    """Two GCL stacks with a residual connection around them."""

    def __init__(self, name, nodes, width, p_drop, momentum, rng=None):
        self.gcl1 = GraphConvLayer(f"{name}.gcl1", nodes, width, width, rng)
        self.bn1 = BatchNorm(f"{name}.bn1", nodes, width, momentum)
        self.gcl2 = GraphConvLayer(f"{name}.gcl2", nodes, width, width, rng)
        self.bn2 = BatchNorm(f"{name}.bn2", nodes, width, momentum)
        self.p_drop = p_drop

    def __call__(self, x, training, rng):
        y = _stack(self.gcl1, self.bn1, x, training, self.p_drop, rng)
        y = _stack(self.gcl2, self.bn2, y, training, self.p_drop, rng)
        return ad.add(x, y)

    def params(self):
        return (self.gcl1.params() + self.bn1.params()
                + self.gcl2.params() + self.bn2.params())

    def buffers(self):
        return self.bn1.buffers() + self.bn2.buffers()


class TrajectoryGcn:
    """The discriminative branch: input GCL, GCB stack, output GCL, global skip."""

    def __init__(self, cfg: ModelConfig, rng=None):
        k, m, h = cfg.nodes, cfg.input_width, cfg.hidden
        self.cfg = cfg
        self.input_gcl = GraphConvLayer("gcn.input", k, m, h, rng)
        self.input_bn = BatchNorm("gcn.input_bn", k, h, cfg.bn_momentum)
        self.blocks = [
            GraphConvBlock(f"gcn.block{i:02d}", k, h, cfg.p_drop, cfg.bn_momentum, rng)
            for i in range(cfg.blocks)
        ]
        self.output_gcl = GraphConvLayer("gcn.output", k, h, m, rng)

    def forward(self, c, training, rng=None, tap_after=None):
        y = _stack(self.input_gcl, self.input_bn, c, training, self.cfg.p_drop, rng)
        tapped = None
        for i, block in enumerate(self.blocks):
            y = block(y, training, rng)
            if tap_after is not None and i + 1 == tap_after:
                tapped = y
        out = ad.add(self.output_gcl(y), c)
        return out, tapped

    def params(self):
        out = self.input_gcl.params() + self.input_bn.params()
        for block in self.blocks:
            out += block.params()
        return out + self.output_gcl.params()

    def buffers(self):
        out = self.input_bn.buffers()
        for block in self.blocks:
            out += block.buffers()
        return out


def reparameterize(mu, log_var, eps):
    """z = mu + exp(log_var / 2) * eps with eps a constant standard-normal draw."""
    sigma = ad.exp(ad.scale(log_var, 0.5))
    return ad.add(mu, ad.mul(sigma, ad.Tensor(eps)))


class VariationalBranch:
    """Recognition bottleneck, latent sampler, and graph-convolutional decoder."""

    def __init__(self, cfg: ModelConfig, rng=None):
        k, h, nz, seq = cfg.nodes, cfg.hidden, cfg.latent_width, cfg.seq_len
        self.cfg = cfg
        flat_in = k * h
        flat_lat = k * nz
        self.enc_w = ad.Tensor(_uniform_init(rng, (flat_in, 2 * flat_lat),
                                             1.0 / np.sqrt(flat_in)),
                               requires_grad=True, name="vae.enc.W")
        self.enc_b = ad.Tensor(np.zeros(2 * flat_lat), requires_grad=True,
                               name="vae.enc.b")
        self.dec_w = ad.Tensor(_uniform_init(rng, (flat_lat, flat_in),
                                             1.0 / np.sqrt(flat_lat)),
                               requires_grad=True, name="vae.dec.W")
        self.dec_b = ad.Tensor(np.zeros(flat_in), requires_grad=True,
                               name="vae.dec.b")
        self.blocks = [
            GraphConvBlock(f"vae.block{i:02d}", k, h, cfg.p_drop, cfg.bn_momentum, rng)
            for i in range(cfg.decoder_blocks)
        ]
        self.head = GraphConvLayer("vae.head", k, h, 2 * seq, rng)

    def recognize(self, trunk):
        """Map a tapped (B, K, hidden) trunk activation to latent Gaussian
        parameters (mu, clamped log-variance), each (B, K, n_z)."""
        cfg = self.cfg
        b = trunk.shape[0]
        flat = ad.reshape(trunk, (b, cfg.nodes * cfg.hidden))
        raw = ad.add(ad.matmul(flat, self.enc_w), self.enc_b)
        raw = ad.reshape(raw, (b, cfg.nodes, 2 * cfg.latent_width))
        mu = raw[:, :, :cfg.latent_width]
        log_var = ad.clamp(raw[:, :, cfg.latent_width:], LOG_VAR_MIN, LOG_VAR_MAX)
        return mu, log_var

    def decode(self, z, training, rng=None):
        """Decode a (B, K, n_z) latent sample to Gaussian reconstruction heads
        (mu, clamped log-variance), each (B, K, seq_len)."""
        cfg = self.cfg
        b = z.shape[0]
        flat = ad.reshape(z, (b, cfg.nodes * cfg.latent_width))
        y = ad.add(ad.matmul(flat, self.dec_w), self.dec_b)
        y = ad.reshape(y, (b, cfg.nodes, cfg.hidden))
        for block in self.blocks:
            y = block(y, training, rng)
        heads = self.head(y)
        mu = heads[:, :, :cfg.seq_len]
        log_var = ad.clamp(heads[:, :, cfg.seq_len:], LOG_VAR_MIN, LOG_VAR_MAX)
        return mu, log_var

    def params(self):
        out = [self.enc_w, self.enc_b, self.dec_w, self.dec_b]
        for block in self.blocks:
            out += block.params()
        return out + self.head.params()

    def buffers(self):
        out = []
        for block in self.blocks:
            out += block.buffers()
        return out


class HybridModel:
    """Discriminative predictor plus (optionally) the variational branch."""

    def __init__(self, cfg: ModelConfig, init_disc_rng=None, init_vae_rng=None):
        self.cfg = cfg
        self.gcn = TrajectoryGcn(cfg, init_disc_rng)
        self.vae = VariationalBranch(cfg, init_vae_rng) if cfg.with_vae else None

    def forward(self, c, training=False, dropout_rng=None, vae_dropout_rng=None,
                eps=None, run_vae=False):
        """One pass over a (B, K, M) coefficient batch.

        run_vae requires the branch to exist and, unless eps is supplied,
        is only meaningful with a recognition tap; eps must be a (B, K, n_z)
        standard-normal draw.
        """
        c = c if isinstance(c, ad.Tensor) else ad.Tensor(c)
        if c.value.ndim != 3:
            raise ValueError(f"expected a (B, K, M) batch, got shape {c.value.shape}")
        tap = self.cfg.recognition_blocks if (run_vae and self.vae is not None) else None
        out, tapped = self.gcn.forward(c, training, dropout_rng, tap_after=tap)
        result = ModelOutput(dct_out=out, trunk_tap=tapped)
        if run_vae:
            if self.vae is None:
                raise ValueError("model has no variational branch")
            if eps is None:
                raise ValueError("run_vae=True requires an eps draw")
            mu, log_var = self.vae.recognize(tapped)
            z = reparameterize(mu, log_var, eps)
            recon_mu, recon_log_var = self.vae.decode(z, training, vae_dropout_rng)
            result.latent_mu = mu
            result.latent_log_var = log_var
            result.z = z
            result.recon_mu = recon_mu
            result.recon_log_var = recon_log_var
        return result

    def latent_mean(self, c_batch):
        """Deterministic latent means for a (B, K, M) batch, eval mode."""
        if self.vae is None:
            raise ValueError("model has no variational branch")
        c = ad.Tensor(np.asarray(c_batch, dtype=np.float64))
        _, tapped = self.gcn.forward(c, False, None,
                                     tap_after=self.cfg.recognition_blocks)
        mu, _ = self.vae.recognize(tapped)
        return mu.value

    def parameters(self):
        """Ordered (name, tensor) pairs; order is fixed by construction."""
        params = self.gcn.params()
        if self.vae is not None:
            params += self.vae.params()
        return [(p.name, p) for p in params]

    def buffers(self):
        out = self.gcn.buffers()
        if self.vae is not None:
            out += self.vae.buffers()
        return out

    def zero_grad(self):
        for _, p in self.parameters():
            p.zero_grad()

    def parameter_count(self, include_vae=True):
        total = 0
        for name, p in self.parameters():
            if not include_vae and name.startswith("vae."):
                continue
            total += p.value.size
        return total

    def zero_parameters(self):
        """Zero every weight and bias (batch-norm scales stay 1): the network
        becomes the identity map on its input through the global skip."""
        for name, p in self.parameters():
            if not name.endswith(".gamma"):
                p.value[...] = 0.0


def build_model(cfg: ModelConfig, seed: int) -> HybridModel:
    """Construct a model with the deterministic per-seed init streams."""
    streams = seed_streams(seed)
    return HybridModel(cfg, init_disc_rng=streams["init_disc"],
                       init_vae_rng=streams["init_vae"])


def predict_dct(model: HybridModel, c_batch: np.ndarray) -> np.ndarray:
    """Eval-mode coefficient prediction for a (B, K, M) batch."""
    out = model.forward(ad.Tensor(np.asarray(c_batch, dtype=np.float64)),
                        training=False, run_vae=False)
    return out.dct_out.value
