//! Dual-resolution cloth data generation and geometry-image conversion.
//!
//! The crate covers the non-learning half of the wrinkle synthesis pipeline:
//!
//! - [`mesh`] and [`obj`]: triangle meshes with material coordinates, midpoint
//!   subdivision, vertex normals and OBJ I/O.
//! - [`sim`]: a small explicit cloth simulator (corotational stretching,
//!   dihedral bending, obstacle contact).
//! - [`scene`] and [`track`]: scene descriptions and the synchronized LR/HR
//!   simulation driven by virtual springs and a two-level force model.
//! - [`geom_image`]: the mesh ↔ multi-feature geometry image codec.
//! - [`refine`]: obstacle push-out and impact-zone self-collision repair.

pub mod error;
pub mod geom_image;
pub mod mesh;
pub mod obj;
pub mod refine;
pub mod scene;
pub mod sim;
pub mod track;

pub use error::{Error, Result};
pub use mesh::{subdivide_midpoint, SubdivisionMap, TriMesh, Vec2, Vec3};
