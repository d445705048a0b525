#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "spamae/common.hpp"
#include "spamae/rng.hpp"

namespace spamae {

struct ArrayGeometry {
    std::vector<std::array<double, 3>> element_positions;  // meters
    double wavelength = 0.0;                               // meters

    size_t size() const { return element_positions.size(); }

    // Uniform linear array along x, spacing in wavelengths (default lambda/2).
    static ArrayGeometry uniform_linear(size_t n_antennas, double wavelength,
                                        double spacing_wavelengths = 0.5);
};

struct CarrierConfig {
    double center_hz     = 0.0;
    double spacing_hz    = 0.0;
    size_t n_subcarriers = 0;
    size_t n_antennas    = 0;

    double wavelength() const { return kSpeedOfLight / center_hz; }
    // f_n = f_center + (n - N_f/2) * spacing, n in [0, N_f)
    double subcarrier_freq(size_t n) const {
        return center_hz +
               (static_cast<double>(n) - static_cast<double>(n_subcarriers) / 2.0) *
                   spacing_hz;
    }
    ArrayGeometry default_geometry() const {
        return ArrayGeometry::uniform_linear(n_antennas, wavelength());
    }
};

struct PathComponent {
    cplx gain;              // alpha_p, linear
    double delay_s    = 0;  // tau_p
    double elevation  = 0;  // theta_p, radians (from z axis)
    double azimuth    = 0;  // phi_p, radians
    double power      = 0;  // rho_p = |alpha_p|^2
};

struct MultipathParamSet {
    std::vector<PathComponent> paths;
    double path_loss_db = 0;  // eta, dB
    bool line_of_sight  = false;
    double pos_x        = 0;  // user position, meters
    double pos_y        = 0;

    size_t path_count() const { return paths.size(); }
    double earliest_delay() const;
    size_t strongest_path_index() const;
    void validate(size_t max_paths) const;  // throws contract_error
};

struct ScenarioConfig {
    uint32_t id              = 0;
    size_t min_paths         = 1;
    size_t max_paths         = 6;
    double rms_delay_spread_s = 100e-9;
    double azimuth_center    = 0.0;   // sector center, radians
    double azimuth_halfwidth = kPi / 3.0;
    double elevation_min     = kPi / 2.0 - 0.3;
    double elevation_max     = kPi / 2.0 + 0.3;
    double los_probability   = 0.5;
    double cell_radius_min_m = 20.0;
    double cell_radius_max_m = 100.0;
};

// Unit direction vector of a path: [sin(th)cos(ph), sin(th)sin(ph), cos(th)].
std::array<double, 3> direction_vector(double elevation, double azimuth);

// a_m = (1/sqrt(N_a)) * exp(-j 2 pi / lambda * r_m . u); unit L2 norm.
std::vector<cplx> array_response(double elevation, double azimuth,
                                 const ArrayGeometry& geometry);

// Column n is sum_p alpha_p exp(-j 2 pi f_n tau_p) a(theta_p, phi_p).
CMat synthesize_csi(const MultipathParamSet& params, const CarrierConfig& carrier,
                    const ArrayGeometry& geometry);

// Draws a physically consistent multipath set for one user: direct-path
// geometry when the LoS coin lands true, exponential power-delay profile,
// free-space path loss of the direct distance.
MultipathParamSet sample_multipath(Rng& rng, const ScenarioConfig& cfg);

// DFT codebook beam b of C beams over an N-element half-wavelength ULA,
// steering grid psi_b = -1 + (2b+1)/C in sin-space.
std::vector<cplx> dft_codebook_beam(size_t n_antennas, size_t codebook_size,
                                    size_t beam);

// argmax_b sum_n |c_b^H h[n]|^2 with h re-synthesized at `carrier`.
uint32_t best_beam_index(const MultipathParamSet& params, const CarrierConfig& carrier,
                         const ArrayGeometry& geometry, size_t codebook_size);

struct SampleLabels {
    bool line_of_sight = false;
    double pos_x       = 0;
    double pos_y       = 0;
    std::vector<uint32_t> beam_indices;  // one per requested codebook size
};

SampleLabels derive_labels(const MultipathParamSet& params,
                           const CarrierConfig& high_band,
                           const ArrayGeometry& high_geometry,
                           const std::vector<size_t>& codebook_sizes);

// Free-space path loss in dB at distance d (meters) and frequency f (Hz).
double free_space_path_loss_db(double distance_m, double freq_hz);

}  // namespace spamae
