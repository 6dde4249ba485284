"""Item modality features and user features."""
from .cae import ImageEncoder, load_images, train_image_autoencoder
from .io import (
    FeatureError, ItemFeatureSet, UserFeatureMatrix, embeddings_matrix, item_feature_set,
    load_precomputed_embeddings, user_feature_matrix,
)
from .scalar import build_item_scalar_features, build_user_features, tile_scalar, zscore
from .text import WordVectorStore, assemble_text_embedding, build_text_matrix, load_traits, select_traits

__all__ = [
    "FeatureError", "ImageEncoder", "ItemFeatureSet", "UserFeatureMatrix", "WordVectorStore",
    "assemble_text_embedding", "build_item_scalar_features", "build_text_matrix", "build_user_features",
    "embeddings_matrix", "item_feature_set", "load_images", "load_precomputed_embeddings", "load_traits",
    "select_traits", "tile_scalar", "train_image_autoencoder", "user_feature_matrix", "zscore",
]
