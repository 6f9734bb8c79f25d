//! Physical constants and the measured defaults of the reference apparatus.
//!
//! Everything here is a plain value; derived quantities (x0, p0, pixel
//! momentum cells, ...) live on the types that own them. The `defaults`
//! module collects the measured parameters of the tweezer setup the synthetic
//! pipeline emulates, so configs and tests draw from a single place.

/// Reduced Planck constant, J·s.
pub const HBAR: f64 = 1.054_571_817e-34;

/// Boltzmann constant, J/K.
pub const KB: f64 = 1.380_649e-23;

/// Mass of ⁸⁷Rb, kg.
pub const RB87_MASS: f64 = 1.443_160_6e-25;

/// Gravitational acceleration used by the magnification cross-check, m/s².
/// Deliberately 9.8 exactly: the fit it anchors treats g as a defined scale.
pub const STANDARD_GRAVITY: f64 = 9.8;

/// Measured parameters of the reference apparatus.
pub mod defaults {
    use std::f64::consts::TAU;

    /// Trap frequency observed with the displaced-ground-state data set, rad/s.
    pub const OMEGA_COHERENT: f64 = TAU * 7.84e3;
    /// Trap frequency of the Fock-state data sets, rad/s.
    pub const OMEGA_FOCK: f64 = TAU * 9.05e3;
    /// Bare trap frequency from the anharmonic center-of-mass fit, rad/s.
    pub const OMEGA_ANHARMONIC_FIT: f64 = TAU * 8.50e3;
    /// Decay time of the coherent center-of-mass oscillation, s.
    pub const COHERENT_DECAY_TIME: f64 = 0.63e-3;

    /// Dimensionless quartic trap strength from the center-of-mass fit.
    pub const LAMBDA_FIT: f64 = -0.0037;
    /// Fitted displacement amplitude for the larger tweezer move, m.
    pub const DISPLACEMENT_FIT: f64 = 166e-9;
    /// Commanded tweezer moves, m.
    pub const TWEEZER_MOVE_LARGE: f64 = 180e-9;
    pub const TWEEZER_MOVE_SMALL: f64 = 140e-9;

    /// Fock-basis truncation used throughout.
    pub const N_MAX: usize = 25;

    /// Imaging system: magnification, camera pixel pitch (m), time of flight
    /// (s), exposure (s).
    pub const MAGNIFICATION: f64 = 64.0;
    pub const PIXEL_PITCH: f64 = 16e-6;
    pub const FLIGHT_TIME: f64 = 0.5e-3;
    pub const EXPOSURE: f64 = 10e-6;

    /// Atom-plane RMS widths of the astigmatic Gaussian PSF, m.
    pub const PSF_SIGMA_X: f64 = 445e-9;
    pub const PSF_SIGMA_Y: f64 = 328e-9;

    /// EMCCD noise: clock-induced-charge rate (events/pixel/frame), EM gain
    /// mean (counts/event), readout RMS (counts), count offset (counts), and
    /// the averaged-frame noise amplitude A in σ = A/√N (counts).
    pub const CIC_RATE: f64 = 7.0e-2;
    pub const EM_GAIN_MEAN: f64 = 73.1;
    pub const READOUT_SIGMA: f64 = 5.4;
    pub const COUNT_OFFSET: f64 = 88.4;
    pub const AVERAGED_NOISE_AMPLITUDE: f64 = 26.5;

    /// Observed excess of the per-column RMS noise over A/√N for the three
    /// data sets (displaced ground state, |1⟩ mixture, displaced Fock mixture).
    pub const NOISE_SCALE_COHERENT: f64 = 1.6;
    pub const NOISE_SCALE_FOCK: f64 = 1.05;
    pub const NOISE_SCALE_DISPLACED_FOCK: f64 = 1.16;

    /// Detected photons per count, and the typical photons collected per shot.
    pub const PHOTONS_PER_COUNT: f64 = 0.0124;
    pub const PHOTONS_PER_SHOT: f64 = 7.0;

    /// Camera counts collected from one shot (b photon budget / conversion).
    pub fn counts_per_shot() -> f64 {
        PHOTONS_PER_SHOT / PHOTONS_PER_COUNT
    }

    /// Richardson–Lucy defaults: iteration count and division floor (counts).
    pub const RL_ITERATIONS: usize = 2;
    pub const RL_FILTER_FLOOR: f64 = 0.69;
    /// Floor used for the non-displaced |1⟩ data set.
    pub const RL_FILTER_FLOOR_FOCK: f64 = 1.03;

    /// MLE stopping rule.
    pub const MLE_TOLERANCE: f64 = 1e-4;
    pub const MLE_MAX_ITERATIONS: usize = 500;

    /// Fitted populations (P0, P1, P2) of the three measured states.
    pub const POPULATIONS_COHERENT: [f64; 3] = [0.93, 0.07, 0.00];
    pub const POPULATIONS_FOCK: [f64; 3] = [0.260, 0.651, 0.089];
    pub const POPULATIONS_DISPLACED_FOCK: [f64; 3] = [0.395, 0.125, 0.480];
    /// Population point used by the anharmonic robustness scenario.
    pub const POPULATIONS_ANHARMONIC_SCENARIO: [f64; 3] = [0.28, 0.57, 0.15];

    /// Quadrature angle counts of the measured data sets.
    pub const ANGLES_COHERENT: usize = 9;
    pub const ANGLES_FOCK: usize = 64;

    /// Sudden relative depth increase applied before readout.
    pub const DEPTH_JUMP_RATIO: f64 = 2.0;

    /// Kinetic-energy temperature equivalents (E_KE = k_B·T/2), K: the
    /// measured expansion energy and the zero-point-only value.
    pub const TOF_TEMPERATURE: f64 = 0.256e-6;
    pub const TOF_TEMPERATURE_ZERO_POINT: f64 = 0.188e-6;
}
