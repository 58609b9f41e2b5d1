//! Point-cloud files, synthetic scenes, augmentation, sampling and voting.

mod augment;
mod io;
mod sampling;
mod scene;

pub use augment::{augment, rotate_z, AugmentOptions};
pub use io::{
    format_text, from_binary, parse_schema, parse_text, read_cloud, read_record, to_binary, write_cloud,
    write_record, CloudRecord, Column,
};
pub use sampling::{coverage_windows, sample_fixed, VoteAccumulator};
pub use scene::{
    generate_scene, toy_dataset, SceneSpec, Shape, Surface, FLOOR, SPHERE, TOY_CLASS_NAMES, WALL, WALL_BASE,
};
