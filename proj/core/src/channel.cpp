#include "spamae/channel.hpp"

#include <algorithm>
#include <cmath>

namespace spamae {

ArrayGeometry ArrayGeometry::uniform_linear(size_t n_antennas, double wavelength,
                                            double spacing_wavelengths) {
    ArrayGeometry g;
    g.wavelength = wavelength;
    g.element_positions.resize(n_antennas);
    for (size_t m = 0; m < n_antennas; ++m)
        g.element_positions[m] = {static_cast<double>(m) * spacing_wavelengths * wavelength,
                                  0.0, 0.0};
    return g;
}

double MultipathParamSet::earliest_delay() const {
    double t = std::numeric_limits<double>::infinity();
    for (const auto& p : paths) t = std::min(t, p.delay_s);
    return t;
}

size_t MultipathParamSet::strongest_path_index() const {
    size_t best = 0;
    for (size_t i = 1; i < paths.size(); ++i)
        if (paths[i].power > paths[best].power) best = i;
    return best;
}

void MultipathParamSet::validate(size_t max_paths) const {
    if (paths.empty() || paths.size() > max_paths)
        throw contract_error("multipath set has " + std::to_string(paths.size()) +
                             " paths, budget is " + std::to_string(max_paths));
    for (const auto& p : paths) {
        if (p.delay_s < 0) throw contract_error("negative path delay");
        if (std::abs(p.power - std::norm(p.gain)) > 1e-12 * std::max(1.0, p.power))
            throw contract_error("path power is not |gain|^2");
    }
}

std::array<double, 3> direction_vector(double elevation, double azimuth) {
    return {std::sin(elevation) * std::cos(azimuth),
            std::sin(elevation) * std::sin(azimuth), std::cos(elevation)};
}

std::vector<cplx> array_response(double elevation, double azimuth,
                                 const ArrayGeometry& geometry) {
    const size_t n   = geometry.size();
    const auto u     = direction_vector(elevation, azimuth);
    const double amp = 1.0 / std::sqrt(static_cast<double>(n));
    std::vector<cplx> a(n);
    for (size_t m = 0; m < n; ++m) {
        const auto& r      = geometry.element_positions[m];
        const double phase = -2.0 * kPi / geometry.wavelength *
                             (r[0] * u[0] + r[1] * u[1] + r[2] * u[2]);
        a[m] = std::polar(amp, phase);
    }
    return a;
}

CMat synthesize_csi(const MultipathParamSet& params, const CarrierConfig& carrier,
                    const ArrayGeometry& geometry) {
    const size_t na = geometry.size();
    const size_t nf = carrier.n_subcarriers;
    CMat h(na, nf);
    for (const auto& p : params.paths) {
        const auto a = array_response(p.elevation, p.azimuth, geometry);
        for (size_t n = 0; n < nf; ++n) {
            const double fn = carrier.subcarrier_freq(n);
            const cplx w    = p.gain * std::polar(1.0, -2.0 * kPi * fn * p.delay_s);
            for (size_t m = 0; m < na; ++m) h.at(m, n) += w * a[m];
        }
    }
    return h;
}

double free_space_path_loss_db(double distance_m, double freq_hz) {
    return 20.0 * std::log10(4.0 * kPi * distance_m * freq_hz / kSpeedOfLight);
}

MultipathParamSet sample_multipath(Rng& rng, const ScenarioConfig& cfg) {
    if (cfg.min_paths == 0 || cfg.max_paths < cfg.min_paths)
        throw config_error("scenario " + std::to_string(cfg.id) +
                           ": empty or inverted path budget");

    MultipathParamSet out;

    // Uniform over the annulus area.
    const double r2min = cfg.cell_radius_min_m * cfg.cell_radius_min_m;
    const double r2max = cfg.cell_radius_max_m * cfg.cell_radius_max_m;
    const double dist  = std::sqrt(rng.uniform(r2min, r2max));
    const double bearing =
        cfg.azimuth_center + rng.uniform(-cfg.azimuth_halfwidth, cfg.azimuth_halfwidth);
    out.pos_x = dist * std::cos(bearing);
    out.pos_y = dist * std::sin(bearing);

    const size_t n_paths = static_cast<size_t>(
        rng.uniform_int(static_cast<int64_t>(cfg.min_paths),
                        static_cast<int64_t>(cfg.max_paths)));
    out.line_of_sight = rng.bernoulli(cfg.los_probability);
    out.path_loss_db  = free_space_path_loss_db(dist, 3.5e9);

    const double direct_delay = dist / kSpeedOfLight;
    out.paths.reserve(n_paths);
    for (size_t p = 0; p < n_paths; ++p) {
        PathComponent pc;
        double excess;
        if (p == 0 && out.line_of_sight) {
            // Geometric direct path: delay from distance, angles toward the
            // user (in-plane, so elevation pi/2), unit relative power.
            excess       = 0.0;
            pc.delay_s   = direct_delay;
            pc.elevation = kPi / 2.0;
            pc.azimuth   = bearing;
        } else {
            excess       = -cfg.rms_delay_spread_s * std::log(1.0 - rng.uniform());
            pc.delay_s   = direct_delay + excess;
            pc.elevation = rng.uniform(cfg.elevation_min, cfg.elevation_max);
            pc.azimuth   = cfg.azimuth_center +
                           rng.uniform(-cfg.azimuth_halfwidth, cfg.azimuth_halfwidth);
        }
        const double rel_power = std::exp(-excess / cfg.rms_delay_spread_s);
        const double phase =
            (p == 0 && out.line_of_sight) ? 0.0 : rng.uniform(0.0, 2.0 * kPi);
        pc.gain  = std::polar(std::sqrt(rel_power), phase);
        pc.power = std::norm(pc.gain);
        out.paths.push_back(pc);
    }

    // Normalize total power to 1 so CSI magnitudes stay O(1) across samples.
    double total = 0;
    for (const auto& p : out.paths) total += p.power;
    const double scale = 1.0 / std::sqrt(total);
    for (auto& p : out.paths) {
        p.gain *= scale;
        p.power = std::norm(p.gain);
    }
    return out;
}

std::vector<cplx> dft_codebook_beam(size_t n_antennas, size_t codebook_size,
                                    size_t beam) {
    if (beam >= codebook_size) throw contract_error("beam index out of codebook");
    const double psi = -1.0 + (2.0 * static_cast<double>(beam) + 1.0) /
                                  static_cast<double>(codebook_size);
    const double amp = 1.0 / std::sqrt(static_cast<double>(n_antennas));
    std::vector<cplx> w(n_antennas);
    for (size_t m = 0; m < n_antennas; ++m)
        w[m] = std::polar(amp, -kPi * static_cast<double>(m) * psi);
    return w;
}

uint32_t best_beam_index(const MultipathParamSet& params, const CarrierConfig& carrier,
                         const ArrayGeometry& geometry, size_t codebook_size) {
    if (codebook_size == 0) throw config_error("codebook size must be positive");
    if (codebook_size > geometry.size())
        throw config_error("codebook size " + std::to_string(codebook_size) +
                           " exceeds antenna count " + std::to_string(geometry.size()));
    const CMat h = synthesize_csi(params, carrier, geometry);
    uint32_t best   = 0;
    double best_pow = -1.0;
    for (size_t b = 0; b < codebook_size; ++b) {
        const auto w = dft_codebook_beam(geometry.size(), codebook_size, b);
        double pow   = 0.0;
        for (size_t n = 0; n < h.cols; ++n) {
            cplx acc = 0.0;
            for (size_t m = 0; m < h.rows; ++m) acc += std::conj(w[m]) * h.at(m, n);
            pow += std::norm(acc);
        }
        if (pow > best_pow) {
            best_pow = pow;
            best     = static_cast<uint32_t>(b);
        }
    }
    return best;
}

SampleLabels derive_labels(const MultipathParamSet& params,
                           const CarrierConfig& high_band,
                           const ArrayGeometry& high_geometry,
                           const std::vector<size_t>& codebook_sizes) {
    SampleLabels out;
    out.line_of_sight = params.line_of_sight;
    out.pos_x         = params.pos_x;
    out.pos_y         = params.pos_y;
    out.beam_indices.reserve(codebook_sizes.size());
    for (size_t c : codebook_sizes)
        out.beam_indices.push_back(best_beam_index(params, high_band, high_geometry, c));
    return out;
}

}  // namespace spamae
