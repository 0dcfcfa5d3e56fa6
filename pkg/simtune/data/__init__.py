from simtune.data.synthetic import (
    Dataset,
    DatasetSplits,
    generate,
    generate_classification,
    generate_identities,
    genuine_pairs,
    impostor_pairs,
)

__all__ = [
    "Dataset",
    "DatasetSplits",
    "generate",
    "generate_classification",
    "generate_identities",
    "genuine_pairs",
    "impostor_pairs",
]
