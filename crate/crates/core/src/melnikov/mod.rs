//! Poincaré–Melnikov potentials, their critical sets, resonant-fiber
//! sections, and steering profiles.

mod critical;
mod field;
mod section;
mod steering;

pub use critical::{
    certify_window, find_critical_set, solve_tau, solve_tau_near, CriticalPoint,
    CriticalScanConfig, WindowCert,
};
pub use field::{model_a_theta_closed_form, Directional, MelnikovField, QuadratureConfig, ThetaJet};
pub use section::{
    construct_section_for_direction, extremal_sections, section_integral, FiberChart,
    SectionForDirection, SectionMap,
};
pub use steering::{build_steering_profile, Hit, SteeringConfig, SteeringProfile};
