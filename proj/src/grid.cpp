#include "polydec/grid.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

namespace polydec {

using nlohmann::json;
using nlohmann::ordered_json;

GridAxes::GridAxes(std::vector<Vector> coords, std::vector<bool> periodic) {
    coords_ = std::move(coords);
    if (static_cast<int>(coords_.size()) > kMaxDim)
        throw ConfigError("grids support at most " + std::to_string(kMaxDim) + " axes");
    periodic_.assign(periodic.begin(), periodic.end());
    const int d = dim();
    shape_.resize(d);
    inv_h_.resize(d);
    for (int k = 0; k < d; ++k) {
        shape_[k] = static_cast<int>(coords_[k].size());
        if (shape_[k] < 2) throw ConfigError("grid axes need at least two points");
        inv_h_[k] = (shape_[k] - 1) / (coords_[k][shape_[k] - 1] - coords_[k][0]);
    }
    strides_.assign(d, 1);
    for (int k = d - 2; k >= 0; --k) strides_[k] = strides_[k + 1] * shape_[k + 1];
    size_ = 1;
    for (int k = 0; k < d; ++k) size_ *= shape_[k];
}

void GridAxes::cell_coord(std::int64_t flat, double* out) const {
    for (int k = 0; k < dim(); ++k) {
        const std::int64_t i = flat / strides_[k];
        flat -= i * strides_[k];
        out[k] = coords_[k][static_cast<int>(i)];
    }
}

void GridAxes::stencil(const double* x, Stencil& st) const {
    const int d = dim();
    int i0[kMaxDim];
    double wf[kMaxDim];
    for (int k = 0; k < d; ++k) {
        const Vector& a = coords_[k];
        const double lo = a[0], hi = a[shape_[k] - 1];
        double v = x[k];
        if (periodic_[k]) {
            const double period = hi - lo;
            v = std::fmod(v - lo, period);
            if (v < 0.0) v += period;
            v += lo;
        } else {
            v = std::min(std::max(v, lo), hi);
        }
        double t = (v - lo) * inv_h_[k];
        int i = static_cast<int>(t);
        if (i > shape_[k] - 2) i = shape_[k] - 2;
        if (i < 0) i = 0;
        double w = t - i;
        if (w < 0.0) w = 0.0;
        if (w > 1.0) w = 1.0;
        i0[k] = i;
        wf[k] = w;
    }
    const int corners = 1 << d;
    st.count = corners;
    for (int c = 0; c < corners; ++c) {
        std::int64_t idx = 0;
        double w = 1.0;
        for (int k = 0; k < d; ++k) {
            const int b = (c >> k) & 1;
            idx += (i0[k] + b) * strides_[k];
            w *= b ? wf[k] : 1.0 - wf[k];
        }
        st.idx[c] = idx;
        st.w[c] = w;
    }
}

double GridAxes::interp(const double* values, const double* x) const {
    Stencil st;
    stencil(x, st);
    double acc = 0.0;
    for (int c = 0; c < st.count; ++c) acc += st.w[c] * values[st.idx[c]];
    return acc;
}

bool GridAxes::same_as(const GridAxes& o, double tol) const {
    if (dim() != o.dim() || shape_ != o.shape_ || periodic_ != o.periodic_) return false;
    for (int k = 0; k < dim(); ++k)
        if ((coords_[k] - o.coords_[k]).cwiseAbs().maxCoeff() > tol) return false;
    return true;
}

GridAxes node_axes(const ControlSystem& sys, const std::vector<int>& state_comps) {
    std::vector<Vector> coords;
    std::vector<bool> periodic;
    for (int comp : state_comps) {
        const int pts = sys.grid_shape.at(comp);
        Vector axis(pts);
        const double lo = sys.full_box.lo[comp], hi = sys.full_box.hi[comp];
        for (int i = 0; i < pts; ++i)
            axis[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(pts - 1);
        coords.push_back(std::move(axis));
        periodic.push_back(sys.periodic_axes[comp]);
    }
    return GridAxes(std::move(coords), std::move(periodic));
}

void PolicyGrid::eval(const double* x, double* u) const {
    GridAxes::Stencil st;
    axes.stencil(x, st);
    for (int j = 0; j < nu; ++j) {
        double acc = 0.0;
        for (int c = 0; c < st.count; ++c) acc += st.w[c] * controls[st.idx[c] * nu + j];
        u[j] = acc;
    }
}

// ---------------------------------------------------------------------------
// PDGRID01 container

namespace {
constexpr char kMagic[8] = {'P', 'D', 'G', 'R', 'I', 'D', '0', '1'};
}

void save_pdgrid(const std::string& path, const std::vector<int>& dims,
                 const std::vector<bool>& periodic, const std::vector<double>& payload,
                 const json& sidecar) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ConfigError("cannot open grid file for writing: " + path);
    os.write(kMagic, 8);
    const std::uint32_t nd = static_cast<std::uint32_t>(dims.size());
    os.write(reinterpret_cast<const char*>(&nd), 4);
    for (int d : dims) {
        const std::uint32_t v = static_cast<std::uint32_t>(d);
        os.write(reinterpret_cast<const char*>(&v), 4);
    }
    for (std::size_t k = 0; k < dims.size(); ++k) {
        const std::uint8_t p = (k < periodic.size() && periodic[k]) ? 1 : 0;
        os.write(reinterpret_cast<const char*>(&p), 1);
    }
    os.write(reinterpret_cast<const char*>(payload.data()),
             static_cast<std::streamsize>(payload.size() * sizeof(double)));
    if (!os) throw ConfigError("failed writing grid file: " + path);
    std::ofstream sc(path + ".json");
    if (!sc) throw ConfigError("cannot open grid sidecar for writing: " + path + ".json");
    sc << sidecar.dump(2) << '\n';
}

PdGrid load_pdgrid(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ConfigError("cannot open grid file: " + path);
    char magic[8];
    is.read(magic, 8);
    if (std::memcmp(magic, kMagic, 8) != 0) throw ConfigError("bad grid magic in " + path);
    std::uint32_t nd = 0;
    is.read(reinterpret_cast<char*>(&nd), 4);
    PdGrid g;
    g.dims.resize(nd);
    for (auto& d : g.dims) {
        std::uint32_t v = 0;
        is.read(reinterpret_cast<char*>(&v), 4);
        d = static_cast<int>(v);
    }
    g.periodic.resize(nd);
    std::int64_t count = 1;
    for (std::uint32_t k = 0; k < nd; ++k) {
        std::uint8_t p = 0;
        is.read(reinterpret_cast<char*>(&p), 1);
        g.periodic[k] = p != 0;
        count *= g.dims[k];
    }
    g.payload.resize(count);
    is.read(reinterpret_cast<char*>(g.payload.data()),
            static_cast<std::streamsize>(count * sizeof(double)));
    if (!is) throw ConfigError("truncated grid file: " + path);
    std::ifstream sc(path + ".json");
    if (sc) g.sidecar = json::parse(sc, nullptr, /*allow_exceptions=*/false);
    return g;
}

namespace {

ordered_json axes_sidecar(const GridAxes& axes, const json& meta) {
    ordered_json j;
    j["meta"] = meta;
    j["axes"] = json::array();
    for (int k = 0; k < axes.dim(); ++k) {
        const Vector& a = axes.axis(k);
        json arr = json::array();
        for (int i = 0; i < a.size(); ++i) arr.push_back(a[i]);
        j["axes"].push_back(arr);
    }
    j["periodic"] = json::array();
    for (int k = 0; k < axes.dim(); ++k) j["periodic"].push_back(axes.periodic(k));
    return j;
}

GridAxes axes_from_sidecar(const PdGrid& g, int state_dims) {
    std::vector<Vector> coords;
    std::vector<bool> periodic;
    if (g.sidecar.contains("axes")) {
        for (const auto& arr : g.sidecar["axes"]) {
            Vector a(arr.size());
            for (std::size_t i = 0; i < arr.size(); ++i) a[static_cast<int>(i)] = arr[i].get<double>();
            coords.push_back(std::move(a));
        }
        for (const auto& p : g.sidecar["periodic"]) periodic.push_back(p.get<bool>());
    } else {
        for (int k = 0; k < state_dims; ++k) {
            Vector a(g.dims[k]);
            for (int i = 0; i < g.dims[k]; ++i) a[i] = i;
            coords.push_back(std::move(a));
            periodic.push_back(g.periodic[k]);
        }
    }
    return GridAxes(std::move(coords), std::move(periodic));
}

}  // namespace

void save_value_grid(const std::string& path, const ValueGrid& g, const json& meta) {
    ordered_json sc = axes_sidecar(g.axes, meta);
    sc["kind"] = "value";
    save_pdgrid(path, g.axes.shape(), [&] {
        std::vector<bool> p;
        for (int k = 0; k < g.axes.dim(); ++k) p.push_back(g.axes.periodic(k));
        return p;
    }(), g.values, sc);
}

void save_policy_grid(const std::string& path, const PolicyGrid& g, const json& meta) {
    ordered_json sc = axes_sidecar(g.axes, meta);
    sc["kind"] = "policy";
    sc["nu"] = g.nu;
    std::vector<int> dims = g.axes.shape();
    dims.push_back(g.nu);  // trailing input axis, fastest
    std::vector<bool> periodic;
    for (int k = 0; k < g.axes.dim(); ++k) periodic.push_back(g.axes.periodic(k));
    periodic.push_back(false);
    save_pdgrid(path, dims, periodic, g.controls, sc);
}

ValueGrid load_value_grid(const std::string& path) {
    const PdGrid g = load_pdgrid(path);
    ValueGrid v;
    v.axes = axes_from_sidecar(g, static_cast<int>(g.dims.size()));
    v.values = g.payload;
    if (static_cast<std::int64_t>(v.values.size()) != v.axes.size())
        throw ConfigError("value grid payload size mismatch in " + path);
    return v;
}

PolicyGrid load_policy_grid(const std::string& path) {
    const PdGrid g = load_pdgrid(path);
    PolicyGrid p;
    p.axes = axes_from_sidecar(g, static_cast<int>(g.dims.size()) - 1);
    p.nu = g.dims.back();
    p.controls = g.payload;
    if (static_cast<std::int64_t>(p.controls.size()) != p.axes.size() * p.nu)
        throw ConfigError("policy grid payload size mismatch in " + path);
    return p;
}

}  // namespace polydec
