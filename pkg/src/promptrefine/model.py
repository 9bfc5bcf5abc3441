"""Category-prompt network for long-tailed multi-label classification.

The model turns per-class semantic embeddings into *category prompts*,
lets those prompts exchange information with the sample's local visual
tokens inside a small transformer-style encoder, and scores each class by
the similarity between its refined prompt and its initial prompt:

    F  = f_loc @ W_proj + b_proj                      visual tokens -> joint space
    P  = gelu(W_emb @ W1 + b1) @ W2 + b2              prompt initialization
    P' = interaction(concat_rows(F, P))[prompt rows]  visual-semantic refinement
    s  = sigmoid(rowwise_dot(P', P))                  per-class probability

Two interaction variants are provided.  The default is a standard
post-norm encoder layer (multi-head self-attention, residual, layer norm,
GELU feed-forward, residual, layer norm).  With ``literal_equations=True``
the layer is stripped to single-head cross-attention from prompts to all
tokens followed by the feed-forward alone — no residuals, norms, or output
projection — matching the bare update equations the design came from.

No positional encodings anywhere: the forward pass is equivariant under
permutations of the class axis, which the tests rely on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

__all__ = [
    "LN_EPS",
    "ModelDims",
    "SemanticEmbedding",
    "Projection",
    "PromptInitParams",
    "InteractionParams",
    "PromptSet",
    "ModelParams",
    "init_model",
    "project_features",
    "init_prompts",
    "vsi_forward",
    "classify",
    "forward",
    "forward_with_prompts",
    "forward_batch",
    "dual_path_grads",
]

LN_EPS = 1e-5


@dataclass
class ModelDims:
    """Shape record: d0 raw feature width, d joint width, v visual tokens,
    c classes, heads attention heads, ffn feed-forward width, tau the
    prompt-hidden-width ratio (hidden width t = round(tau * d))."""

    d0: int
    d: int
    v: int
    c: int
    heads: int
    ffn: int
    tau: float = 0.5

    def __post_init__(self):
        for name in ("d0", "d", "v", "c", "heads", "ffn"):
            if getattr(self, name) < 1:
                raise ValueError(f"dimension {name} must be >= 1")
        if self.d % self.heads != 0:
            raise ValueError(f"d={self.d} not divisible by heads={self.heads}")
        if round(self.tau * self.d) < 1:
            raise ValueError(f"tau={self.tau} gives prompt hidden width < 1 at d={self.d}")

    @property
    def t(self) -> int:
        return round(self.tau * self.d)

    def to_dict(self) -> dict:
        return {"d0": self.d0, "d": self.d, "v": self.v, "c": self.c,
                "heads": self.heads, "ffn": self.ffn, "tau": self.tau}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelDims":
        return cls(d0=int(d["d0"]), d=int(d["d"]), v=int(d["v"]), c=int(d["c"]),
                   heads=int(d["heads"]), ffn=int(d["ffn"]), tau=float(d.get("tau", 0.5)))


@dataclass
class SemanticEmbedding:
    """Frozen per-class embedding matrix (c, m) with class names."""

    W: Tensor
    class_names: list

    def __post_init__(self):
        if self.W.data.ndim != 2:
            raise ad.ShapeError(f"embedding must be 2-d, got {self.W.shape}")
        if len(self.class_names) != self.W.shape[0]:
            raise ValueError(
                f"{len(self.class_names)} names for {self.W.shape[0]} embedding rows")
        if self.W.requires_grad:
            raise ValueError("the semantic embedding is frozen; requires_grad must be False")

    @property
    def c(self) -> int:
        return self.W.shape[0]

    @property
    def m(self) -> int:
        return self.W.shape[1]


@dataclass
class Projection:
    """Linear map of raw visual tokens into the joint space."""

    w: Tensor  # (d0, d)
    b: Tensor  # (d,)


@dataclass
class PromptInitParams:
    """Two-layer GELU net mapping embeddings to initial prompts."""

    w1: Tensor  # (m, t)
    b1: Tensor  # (t,)
    w2: Tensor  # (t, d)
    b2: Tensor  # (d,)
    tau: float = 0.5

    def __post_init__(self):
        t, d = self.w1.shape[1], self.w2.shape[1]
        if self.w2.shape[0] != t:
            raise ad.ShapeError(f"w1 {self.w1.shape} and w2 {self.w2.shape} disagree on t")
        if round(self.tau * d) != t:
            raise ValueError(
                f"hidden width {t} != round(tau*d) = {round(self.tau * d)} for tau={self.tau}, d={d}")


@dataclass
class InteractionParams:
    """One encoder layer: joint QKV maps (d, d) across all heads, an
    attention output map, a GELU feed-forward, and two layer norms."""

    w_q: Tensor
    w_k: Tensor
    w_v: Tensor
    w_attn_out: Tensor
    w_ffn_in: Tensor   # (d, ffn)
    b_ffn_in: Tensor   # (ffn,)
    w_ffn_out: Tensor  # (ffn, d)
    b_ffn_out: Tensor  # (d,)
    ln1_gain: Tensor
    ln1_bias: Tensor
    ln2_gain: Tensor
    ln2_bias: Tensor
    heads: int = 1

    def __post_init__(self):
        d = self.w_q.shape[0]
        for name in ("w_q", "w_k", "w_v", "w_attn_out"):
            if getattr(self, name).shape != (d, d):
                raise ad.ShapeError(f"{name} must be ({d}, {d}), got {getattr(self, name).shape}")
        if d % self.heads != 0:
            raise ValueError(f"d={d} not divisible by heads={self.heads}")


@dataclass
class PromptSet:
    """The prompts of one forward pass: as initialized and as refined."""

    initial: Tensor
    refined: Tensor


@dataclass
class ModelParams:
    dims: ModelDims
    embedding: SemanticEmbedding
    projection: Projection
    prompt_init: PromptInitParams
    interaction: InteractionParams
    literal_equations: bool = False

    def learnable(self) -> dict:
        """Stable name -> tensor map of every trainable leaf (the frozen
        embedding is excluded)."""
        out = {
            "projection.w": self.projection.w,
            "projection.b": self.projection.b,
            "prompt_init.w1": self.prompt_init.w1,
            "prompt_init.b1": self.prompt_init.b1,
            "prompt_init.w2": self.prompt_init.w2,
            "prompt_init.b2": self.prompt_init.b2,
        }
        for name in ("w_q", "w_k", "w_v", "w_attn_out", "w_ffn_in", "b_ffn_in",
                     "w_ffn_out", "b_ffn_out", "ln1_gain", "ln1_bias",
                     "ln2_gain", "ln2_bias"):
            out[f"interaction.{name}"] = getattr(self.interaction, name)
        return out

    def all_tensors(self) -> dict:
        """learnable() plus the frozen embedding, for persistence."""
        out = dict(self.learnable())
        out["embedding.W"] = self.embedding.W
        return out


def _uniform(rng: np.random.Generator, shape: tuple, fan_in: int) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_model(dims: ModelDims, embedding: SemanticEmbedding, seed: int,
               literal_equations: bool = False) -> ModelParams:
    """Seeded initialization: weights uniform in +/- 1/sqrt(fan_in), biases
    and layer-norm biases zero, layer-norm gains one.  The draw order is
    fixed (projection, prompt net, attention, feed-forward) so a seed pins
    every parameter bitwise."""
    if embedding.c != dims.c:
        raise ValueError(f"embedding has {embedding.c} classes, dims.c = {dims.c}")
    rng = np.random.default_rng(seed)
    d0, d, t, ffn, m = dims.d0, dims.d, dims.t, dims.ffn, embedding.m

    projection = Projection(
        w=ad.parameter(_uniform(rng, (d0, d), d0)),
        b=ad.parameter(np.zeros(d)),
    )
    prompt_init = PromptInitParams(
        w1=ad.parameter(_uniform(rng, (m, t), m)),
        b1=ad.parameter(np.zeros(t)),
        w2=ad.parameter(_uniform(rng, (t, d), t)),
        b2=ad.parameter(np.zeros(d)),
        tau=dims.tau,
    )
    interaction = InteractionParams(
        w_q=ad.parameter(_uniform(rng, (d, d), d)),
        w_k=ad.parameter(_uniform(rng, (d, d), d)),
        w_v=ad.parameter(_uniform(rng, (d, d), d)),
        w_attn_out=ad.parameter(_uniform(rng, (d, d), d)),
        w_ffn_in=ad.parameter(_uniform(rng, (d, ffn), d)),
        b_ffn_in=ad.parameter(np.zeros(ffn)),
        w_ffn_out=ad.parameter(_uniform(rng, (ffn, d), ffn)),
        b_ffn_out=ad.parameter(np.zeros(d)),
        ln1_gain=ad.parameter(np.ones(d)),
        ln1_bias=ad.parameter(np.zeros(d)),
        ln2_gain=ad.parameter(np.ones(d)),
        ln2_bias=ad.parameter(np.zeros(d)),
        heads=dims.heads,
    )
    return ModelParams(dims=dims, embedding=embedding, projection=projection,
                       prompt_init=prompt_init, interaction=interaction,
                       literal_equations=literal_equations)


def project_features(f_loc: Tensor, projection: Projection) -> Tensor:
    """Map raw visual tokens (v, d0) into the joint space -> (v, d)."""
    return ad.add_rowvec(ad.matmul(f_loc, projection.w), projection.b)


def init_prompts(embedding: SemanticEmbedding, pi: PromptInitParams) -> Tensor:
    """Initial category prompts (c, d) from the frozen embedding.

    Depends only on the embedding and the prompt-net weights — never on
    the sample or its labels.
    """
    hidden = ad.gelu(ad.add_rowvec(ad.matmul(embedding.W, pi.w1), pi.b1))
    return ad.add_rowvec(ad.matmul(hidden, pi.w2), pi.b2)


def _attention(q: Tensor, k: Tensor, v: Tensor, heads: int) -> Tensor:
    """Scaled dot-product attention, heads as column blocks, per-head
    scaling 1/sqrt(d/heads)."""
    d = q.shape[1]
    dh = d // heads
    outs = []
    for h in range(heads):
        lo, hi = h * dh, (h + 1) * dh
        qh = ad.slice_cols(q, lo, hi) if heads > 1 else q
        kh = ad.slice_cols(k, lo, hi) if heads > 1 else k
        vh = ad.slice_cols(v, lo, hi) if heads > 1 else v
        weights = ad.softmax_rows(ad.scale(ad.matmul(qh, ad.transpose(kh)),
                                           1.0 / math.sqrt(dh)))
        outs.append(ad.matmul(weights, vh))
    return ad.concat_cols(*outs) if heads > 1 else outs[0]


def vsi_forward(F: Tensor, P: Tensor, inter: InteractionParams,
                literal_equations: bool = False) -> Tensor:
    """Visual-semantic interaction: refine the prompts against the tokens.

    Standard path: one post-norm encoder layer over Z = [F; P], returning
    the prompt rows.  Literal path: single-head attention with prompt
    queries over all of Z (scale 1/sqrt(d)), then the feed-forward —
    nothing else.
    """
    if F.shape[1] != P.shape[1]:
        raise ad.ShapeError(f"tokens {F.shape} and prompts {P.shape} disagree on width")
    n_vis, n_cls = F.shape[0], P.shape[0]
    z = ad.concat_rows(F, P)

    if literal_equations:
        q = ad.matmul(P, inter.w_q)
        k = ad.matmul(z, inter.w_k)
        v = ad.matmul(z, inter.w_v)
        d = q.shape[1]
        weights = ad.softmax_rows(ad.scale(ad.matmul(q, ad.transpose(k)),
                                           1.0 / math.sqrt(d)))
        pooled = ad.matmul(weights, v)
        hidden = ad.gelu(ad.add_rowvec(ad.matmul(pooled, inter.w_ffn_in), inter.b_ffn_in))
        return ad.add_rowvec(ad.matmul(hidden, inter.w_ffn_out), inter.b_ffn_out)

    q = ad.matmul(z, inter.w_q)
    k = ad.matmul(z, inter.w_k)
    v = ad.matmul(z, inter.w_v)
    attn = ad.matmul(_attention(q, k, v, inter.heads), inter.w_attn_out)
    z1 = ad.layer_norm_rows(ad.add(z, attn), inter.ln1_gain, inter.ln1_bias, eps=LN_EPS)
    hidden = ad.gelu(ad.add_rowvec(ad.matmul(z1, inter.w_ffn_in), inter.b_ffn_in))
    ffn = ad.add_rowvec(ad.matmul(hidden, inter.w_ffn_out), inter.b_ffn_out)
    z2 = ad.layer_norm_rows(ad.add(z1, ffn), inter.ln2_gain, inter.ln2_bias, eps=LN_EPS)
    return ad.slice_rows(z2, n_vis, n_vis + n_cls)


def classify(p_refined: Tensor, p_initial: Tensor) -> Tensor:
    """Per-class probability: sigmoid of the refined/initial prompt dot
    product, class by class.  No cross-class score matrix exists — class
    j's probability involves only row j of each prompt set."""
    if p_refined.shape != p_initial.shape:
        raise ad.ShapeError(
            f"prompt sets must match, got {p_refined.shape} vs {p_initial.shape}")
    return ad.sigmoid(ad.sum_rows(ad.mul(p_refined, p_initial)))


def _as_features(sample) -> np.ndarray:
    return sample.features if hasattr(sample, "features") else np.asarray(sample)


def _check_features(features: np.ndarray, dims: ModelDims) -> None:
    if features.shape != (dims.v, dims.d0):
        raise ad.ShapeError(
            f"features must be ({dims.v}, {dims.d0}), got {features.shape}")


def forward_with_prompts(sample, params: ModelParams,
                         literal_equations: bool | None = None) -> tuple[Tensor, PromptSet]:
    """Full forward pass returning scores plus both prompt sets.

    The same initial-prompt tensor instance feeds the interaction encoder
    and the classifier, so its gradient carries both routes.
    """
    literal = params.literal_equations if literal_equations is None else literal_equations
    features = _as_features(sample)
    _check_features(features, params.dims)
    F = project_features(ad.constant(features), params.projection)
    P = init_prompts(params.embedding, params.prompt_init)
    refined = vsi_forward(F, P, params.interaction, literal_equations=literal)
    scores = classify(refined, P)
    return scores, PromptSet(initial=P, refined=refined)


def forward(sample, params: ModelParams,
            literal_equations: bool | None = None) -> Tensor:
    """Per-class probabilities (c,) for one sample."""
    scores, _ = forward_with_prompts(sample, params, literal_equations)
    return scores


def forward_batch(samples, params: ModelParams,
                  literal_equations: bool | None = None) -> Tensor:
    """Scores for a batch, stacked to (len(samples), c).

    The prompts are sample-independent, so one prompt graph is shared by
    every sample in the batch; gradient contributions from all samples
    accumulate into it, which equals running ``forward`` per sample.
    """
    literal = params.literal_equations if literal_equations is None else literal_equations
    P = init_prompts(params.embedding, params.prompt_init)
    rows = []
    for sample in samples:
        features = _as_features(sample)
        _check_features(features, params.dims)
        F = project_features(ad.constant(features), params.projection)
        refined = vsi_forward(F, P, params.interaction, literal_equations=literal)
        scores = classify(refined, P)
        rows.append(ad.reshape(scores, (1, params.dims.c)))
    return rows[0] if len(rows) == 1 else ad.concat_rows(*rows)


def dual_path_grads(sample, labels: np.ndarray, params: ModelParams,
                    loss_fn) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Split the loss gradient at the initial prompts into its two routes.

    The prompts enter the computation twice: through the interaction
    encoder and directly as classifier weights.  Detaching one use at a
    time isolates the other, and because backward accumulates by
    summation, g_total = g_direct + g_via_interaction holds to roundoff.

    Returns (g_total, g_direct, g_via_interaction) as plain arrays.
    """
    features = _as_features(sample)
    _check_features(features, params.dims)

    def run(detach_interaction: bool, detach_classifier: bool) -> np.ndarray:
        F = project_features(ad.constant(features), params.projection)
        P = init_prompts(params.embedding, params.prompt_init)
        p_inter = P.detach() if detach_interaction else P
        p_cls = P.detach() if detach_classifier else P
        refined = vsi_forward(F, p_inter, params.interaction,
                              literal_equations=params.literal_equations)
        loss = loss_fn(classify(refined, p_cls), labels)
        ad.backward(loss)
        return P.grad_or_zeros().copy()

    g_total = run(False, False)
    g_direct = run(True, False)
    g_via_interaction = run(False, True)
    return g_total, g_direct, g_via_interaction
