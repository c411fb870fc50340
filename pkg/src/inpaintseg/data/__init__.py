from .augment import (ALL_TRANSFORMS, InvalidStats, Transform, apply_transform, augment,
                      channel_stats, denormalize, normalize, sample_transform)
from .loading import MissingLabelError, SampleSet, load_manifest
from .manifest import (DatasetManifest, EmptyInput, HeterogeneousInput, SampleRecord,
                       SourceImage, TILINGS, build_manifest, merge_manifests, scan_city_osm,
                       scan_deepglobe, subset_halving)
from .synthetic import (STYLES, Road, SceneSet, SyntheticSceneSpec, generate_synthetic_scene,
                        rasterize_road, rasterize_roads, render_scenes, scene_roads,
                        scene_specs, write_synthetic_dataset)
from .tiling import InvalidStride, crop_tiles, five_crop, five_crop_offsets
