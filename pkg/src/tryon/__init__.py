"""Shape-matched multi-warp virtual try-on, desk scale.

Pipeline: generate or ingest product/model/mask triples, learn a shape
embedding for picking compatible product/model pairs, warp the product
onto the model with k coordinated affine warps, combine the warps with an
inpainting U-Net, and evaluate with bias-corrected FID plus pixel and
perceptual errors.
"""

__version__ = "0.1.0"
