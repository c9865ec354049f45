# Supuestos de los presets de presupuesto. Las constantes exactas detrás de las
# cifras publicadas no existen; estos valores son supuestos documentados:
#   - ViT-L/14 a 448px: 24 capas, ancho 1024, FFN 4096, 1024 patches por tile.
#   - LLM de 7-8B: 32 capas, ancho 4096, FFN 11008, sólo prefill.
#   - Convención de conteo: 1 multiply-accumulate = 1 FLOP (flops_per_mac=1),
#     como cuentan los profilers habituales.
#   - Base: PixelShuffle 2x2 + MLP 4096->4096->4096, 256 tokens por imagen.
#   - PVC: PixelShuffle 4x4, AdaLN/TE con oculto 4096, MLP 16384->4096->4096.
ARCH_PRESETS = {
    "table4-baseline": {
        "name": "table4-baseline",
        "vit": {"layers": 24, "temporal_layers": 0, "hidden": 1024, "heads": 16,
                "ffn": 4096, "patch": 14, "image_size": 448},
        "compression": {"k": 2, "mlp_hidden": 4096, "out_dim": 4096, "adaptive": False},
        "llm": {"layers": 32, "hidden": 4096, "ffn": 11008, "heads": 32},
        "flops_per_mac": 1,
        "notes": ["InternVL2-8B-like", "256 tokens por imagen, sin repetición"],
    },
    "table4-pvc": {
        "name": "table4-pvc",
        "vit": {"layers": 24, "temporal_layers": 8, "hidden": 1024, "heads": 16,
                "ffn": 4096, "patch": 14, "image_size": 448},
        "compression": {"k": 4, "mlp_hidden": 4096, "out_dim": 4096, "adaptive": True,
                        "adaln_hidden": 4096, "te_hidden": 4096},
        "llm": {"layers": 32, "hidden": 4096, "ffn": 11008, "heads": 32},
        "flops_per_mac": 1,
        "notes": ["PVC-8B-like", "64 tokens por frame, 4 repeticiones"],
    },
}

# Una imagen de 448x448 y 2048 tokens de texto
WORKLOAD_PRESETS = {
    "table4-baseline": {"kind": "image", "t_img": 1, "tiles": 1, "text_tokens": 2048},
    "table4-pvc": {"kind": "image", "t_img": 4, "tiles": 1, "text_tokens": 2048},
}
