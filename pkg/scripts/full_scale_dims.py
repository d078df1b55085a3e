#!/usr/bin/env python3
"""Print feature dimensions of the full-size configuration (no weights needed)."""

from teleqa.config import full_scale
from teleqa.features import multi_scale_rois


def main():
    cfg = full_scale()
    dims = cfg.feature_dims()
    lo, hi = cfg.patch_scales
    print(f"frame  {dims['frame']}")
    print(f"patch  {dims['patch']}  ({len(multi_scale_rois(lo, hi))} RoIs, scales {lo}..{hi})")
    print(f"clip   {dims['clip']}")
    print(f"audio  {dims['audio']}")
    print(f"visual {cfg.visual_dim()}  (modalities {'+'.join(cfg.visual_modalities)})")


if __name__ == "__main__":
    main()
