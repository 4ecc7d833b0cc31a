"""Domain adaptation for semantic segmentation on procedural scenes.

Thin re-export of the compiled core. Configs travel as JSON strings with the
same schema the CLI reads; arrays are numpy, images [3,H,W] float64, labels
and masks [H,W] uint8.
"""

from udaforge._core import (
    UdaforgeError,
    apply_preset,
    class_frequencies,
    default_config,
    evaluate_checkpoint,
    generate_scene,
    grow_mask,
    loss_adversarial,
    loss_discriminator,
    loss_self_teach,
    loss_supervised_ce,
    miou,
    one_hot,
    poly_lr,
    preset_names,
    pseudo_labels,
    reliability_weights,
    segment,
    threshold_mask,
    train,
    write_dataset,
)

__all__ = [
    "UdaforgeError",
    "apply_preset",
    "class_frequencies",
    "default_config",
    "evaluate_checkpoint",
    "generate_scene",
    "grow_mask",
    "loss_adversarial",
    "loss_discriminator",
    "loss_self_teach",
    "loss_supervised_ce",
    "miou",
    "one_hot",
    "poly_lr",
    "preset_names",
    "pseudo_labels",
    "reliability_weights",
    "segment",
    "threshold_mask",
    "train",
    "write_dataset",
]
