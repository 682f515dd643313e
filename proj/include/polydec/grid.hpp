#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "polydec/system.hpp"

namespace polydec {

/// Uniform rectilinear axes with optional per-axis wrap-around; row-major
/// storage with the last axis fastest.
class GridAxes {
public:
    GridAxes() = default;
    GridAxes(std::vector<Vector> coords, std::vector<bool> periodic);

    int dim() const { return static_cast<int>(coords_.size()); }
    std::int64_t size() const { return size_; }
    const std::vector<int>& shape() const { return shape_; }
    const std::vector<std::int64_t>& strides() const { return strides_; }
    const Vector& axis(int k) const { return coords_[k]; }
    bool periodic(int k) const { return periodic_[k] != 0; }

    /// Coordinates of a flat cell index.
    void cell_coord(std::int64_t flat, double* out) const;

    static constexpr int kMaxDim = 6;
    struct Stencil {
        int count = 0;
        std::int64_t idx[1 << kMaxDim];
        double w[1 << kMaxDim];
    };

    /// Multilinear interpolation stencil at x (clamped on regular axes,
    /// wrapped on periodic ones).
    void stencil(const double* x, Stencil& st) const;

    double interp(const double* values, const double* x) const;

    bool same_as(const GridAxes& o, double tol = 1e-12) const;

private:
    std::vector<Vector> coords_;
    std::vector<std::uint8_t> periodic_;
    std::vector<int> shape_;
    std::vector<std::int64_t> strides_;
    std::vector<double> inv_h_;
    std::int64_t size_ = 0;
};

/// Axes for a subset of a system's state components, spanning full_box with
/// the system grid shape.
GridAxes node_axes(const ControlSystem& sys, const std::vector<int>& state_comps);

struct ValueGrid {
    GridAxes axes;
    std::vector<double> values;

    double interp(const double* x) const { return axes.interp(values.data(), x); }
};

struct PolicyGrid {
    GridAxes axes;
    int nu = 0;
    std::vector<double> controls;  // [cell * nu + j]

    /// Multilinear interpolation of each stored control component.
    void eval(const double* x, double* u) const;
};

/// Binary container: magic "PDGRID01" | u32 ndim | u32 lens[] | u8 periodic[]
/// | little-endian f64 payload, row-major, last axis fastest. A JSON sidecar
/// at path + ".json" describes system, node, and axes.
void save_pdgrid(const std::string& path, const std::vector<int>& dims,
                 const std::vector<bool>& periodic, const std::vector<double>& payload,
                 const nlohmann::json& sidecar);

struct PdGrid {
    std::vector<int> dims;
    std::vector<bool> periodic;
    std::vector<double> payload;
    nlohmann::json sidecar;
};
PdGrid load_pdgrid(const std::string& path);

void save_value_grid(const std::string& path, const ValueGrid& g, const nlohmann::json& meta);
void save_policy_grid(const std::string& path, const PolicyGrid& g, const nlohmann::json& meta);
ValueGrid load_value_grid(const std::string& path);
PolicyGrid load_policy_grid(const std::string& path);

}  // namespace polydec
