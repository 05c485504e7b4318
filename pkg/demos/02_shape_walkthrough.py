"""Walk a batch through the full-size head and print each stage's shape.

With hidden size 768, 32 channels per convolution branch, and a 512-wide
dense block, the feature widths go 768 -> 128 (four branches of 32)
-> 896 (residual concat) -> 896 (attention) -> 896 (pooled) -> 512 -> C.
"""

from inceptive import ModelConfig, shape_probe

cfg = ModelConfig(d=768, c=32, n_heads=8, dense_dim=512, n_classes=4)
print(f"enriched width d_r = d + 4c = {cfg.d_r}")
print(f"default head dim   = d_r / heads = {cfg.resolved_head_dim}\n")

shapes = shape_probe(cfg, batch=2, length=8)
order = ["hidden", "conv_concat", "enriched", "attended", "pooled", "dense", "logits"]
for stage in order:
    print(f"{stage:12s} {shapes[stage]}")

print("\nablation variants change only their removed stage:")
for variant in ("no_attn", "no_dense"):
    v_shapes = shape_probe(ModelConfig(d=768, c=32, n_heads=8, dense_dim=512,
                                       n_classes=4, variant=variant), batch=2, length=8)
    present = [s for s in order if s in v_shapes]
    print(f"  {variant:9s}: {' -> '.join(str(v_shapes[s]) for s in present)}")
