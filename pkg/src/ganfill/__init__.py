"""WGAN-GP image completion and residual enhancement on a small autodiff core."""

from .autodiff import (
    Graph,
    GraphError,
    NumericError,
    Tensor,
    absolute,
    add,
    backward,
    broadcast_to,
    conv2d,
    div,
    elementwise,
    exp,
    full,
    log,
    matmul,
    mul,
    neg,
    norm,
    ones,
    pause,
    permute,
    reduce_mean,
    reduce_sum,
    relu,
    reshape,
    sample,
    sigmoid,
    sqrt,
    square,
    sub,
    sumpool2,
    tanh,
    tensor,
    transpose,
    upsample2,
    zeros,
)
from .completion import (
    CompletionConfig,
    apply_mask,
    blend_reconstruct,
    contextual_loss,
    optimize_latent,
    perceptual_loss,
    total_loss,
)
from .data import (
    CheckpointError,
    CodecError,
    decode_pgm,
    decode_ppm,
    encode_pgm,
    encode_ppm,
    gen_faces,
    gen_mixture2d,
    load_checkpoint,
    make_mask,
    mixture_mode_centers,
    read_image,
    save_checkpoint,
    split_dataset,
    write_image,
)
from .enhance import (
    EnhanceConfig,
    ImagePair,
    degrade,
    enhance_image,
    enhancement_loss,
    make_pairs,
    train_enhancer,
)
from .metrics import QualityReport, mse, psnr, ssim
from .models import ArchPreset, LayerSpec, Model, forward, init_model
from .optim import Adam, sgd_step
from .rng import Rng
from .wgan import (
    TrainLog,
    WganConfig,
    critic_loss_total,
    critic_wasserstein,
    generator_loss,
    gradient_penalty,
    train_wgan,
)

__version__ = "0.1.0"
