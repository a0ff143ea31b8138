from .degrade import DegradeSpec, degrade, gaussian_blur_kernel, motion_blur_kernel
from .io import Record, SampleManifest, load_manifest, load_png, save_png, to_uint8, to_unit
from .patches import Patch, augment, extract_patches, stitch_patches
from .render import render_text_image
