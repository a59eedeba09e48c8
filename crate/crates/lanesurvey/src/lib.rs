//! Survey engine for mapping on-road bicycle lanes and paved shoulders.
//!
//! The pipeline turns geolocated street-scene detection evidence plus an
//! OpenStreetMap extract into validated route maps:
//!
//! 1. [`osm`] parses extracts into a road network with intersections and
//!    same-named way chains.
//! 2. [`plan`] generates the image sampling plan around intersections and
//!    [`imagery`] fetches (or replays) the street imagery with a cost ledger.
//! 3. [`detector`] adapts an external object detector and filters its output;
//!    [`dashcam`] geotags frame sequences from NMEA tracks and [`matching`]
//!    resolves arbitrary points to the nearest way and intersection.
//! 4. [`routes`] infers lane routes from consecutive-intersection evidence,
//!    [`compare`] measures agreement against the cycleway tags already in the
//!    map data, and [`vision`] + [`shoulder`] detect and map paved shoulders
//!    from dash-cam frames.

pub mod compare;
pub mod dashcam;
pub mod detector;
pub mod geodesy;
pub mod imagery;
pub mod layer;
pub mod matching;
pub mod osm;
pub mod plan;
pub mod routes;
pub mod shoulder;
#[cfg(test)]
pub(crate) mod testutil;
pub mod vision;

pub use geodesy::{GeoPoint, Heading};
pub use layer::RouteLayer;
pub use osm::RoadNetwork;
