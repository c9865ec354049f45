# Constantes de arquitectura por nombre; se validan al construir PvcConfig
MODEL_PRESETS = {
    # ViT-L/14 a 448px, progresivo en las últimas 8 de 24 capas
    "vit-l-448": {
        "image_size": 448,
        "patch_size": 14,
        "channels": 1024,
        "heads": 16,
        "ffn_dim": 4096,
        "layers": 24,
        "temporal_layers": 8,
        "shuffle_kernel": 4,
        "t_img": 4,
        "min_frames": 16,
        "max_frames": 96,
    },
    # Escala de escritorio: grilla 8x8, 4 tokens comprimidos por frame
    "toy": {
        "image_size": 56,
        "patch_size": 7,
        "channels": 32,
        "heads": 4,
        "ffn_dim": 64,
        "layers": 8,
        "temporal_layers": 4,
        "shuffle_kernel": 4,
        "t_img": 4,
        "min_frames": 1,
        "max_frames": 96,
    },
}
