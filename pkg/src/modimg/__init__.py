"""Multi-modal clinical records rendered as images for transformer fusion.

Subpackages:
  catalog   variable and medication catalogs, grid layout, colors
  raster    integer rasterization primitives (lines, markers, panels)
  ingest    file parsing, cohort assembly, stratified splits
  encode    deterministic modality renderers and normalization
  textmeta  metadata serialization and byte-level BPE tokenizer
  metrics   AUROC/AUPRC/balanced accuracy and significance tests
  model     from-scratch vision/text transformers with late fusion
  explain   attention saliency maps and overlays
  synth     seeded synthetic cohort generator with ground-truth sidecar
  pipeline  dataset assembly and experiment runner
  cli       `modimg` command line entry point
"""

__version__ = "0.1.0"
