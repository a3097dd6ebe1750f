"""facecloak: compression-resistant adversarial perturbations for face
verification — attacks, robust training, a JPEG codec pair, DCT frequency
analysis, and a black-box transfer evaluation bench."""

from . import errors
from .attacks import (
    Admix,
    AttackPlan,
    DiverseInput,
    Momentum,
    PerturbationResult,
    ScaleInvariant,
    TranslationInvariant,
    attack_plan_from_name,
    dct_low_constrain,
    diffjpeg_wrapped_gradient,
    ensemble_gradient,
    fgsm,
    iterative_attack,
    lfap,
    lmfap,
    plan_from_config,
)
from .embedder import (
    EmbedderModel,
    Provenance,
    SupervisoryHead,
    VerificationRule,
    attack_loss,
    embed,
    head_forward,
    input_gradient,
    pair_distance,
    verify,
)
from .evaluation import (
    AdvSet,
    EvalReport,
    EvalRow,
    SsimConfig,
    StabilityResult,
    attack_success_rate,
    calibrate_threshold,
    frequency_ablation,
    generate_adv_set,
    jpeg_sweep,
    lambda_ablation,
    ssim,
    stability_report,
    transfer_matrix,
    verification_accuracy,
)
from .freq import (
    SpectrumProfile,
    band_spectrum,
    dct2,
    idct2,
    jpeg_attenuation_profile,
    low_band_fraction,
    masked_accuracy_sweep,
    remove_component,
    removal_mask,
)
from .imaging import (
    PairEntry,
    PairManifest,
    load_image,
    load_pair_images,
    load_pairs,
    save_image,
    write_pairs,
)
from .jpeg import (
    JpegConfig,
    QuantTables,
    differentiable_jpeg,
    differentiable_jpeg_torch,
    jpeg_roundtrip,
    quant_tables_for_quality,
)
from .training import (
    IdentityDataset,
    TrainConfig,
    adversarial_train,
    pgd_inner_max,
    prime_config,
    standard_train,
    subprime_config,
)

__version__ = "0.1.0"
