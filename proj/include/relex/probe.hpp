#pragma once

#include "relex/oracle.hpp"

#include <optional>
#include <vector>

namespace relex {

struct Segment {
    VectorXd a;
    VectorXd b;

    double length() const { return (b - a).norm(); }
    VectorXd at(double t) const { return a + t * (b - a); }
    VectorXd direction() const { return (b - a).normalized(); }
};

// normal.x + offset = 0, with unit normal. Canonical orientation: the first
// coordinate of the normal that is clearly nonzero is made positive (the true
// sign of a boundary is not identifiable from the boundary alone).
struct Hyperplane {
    VectorXd normal;
    double offset = 0.0;

    double signed_distance(const VectorXd& x) const { return normal.dot(x) + offset; }
    void canonicalize();
};

struct FitResult {
    Hyperplane plane;
    double residual = 0.0;  // rms point-to-plane distance
    double max_abs_distance = 0.0;
};

FitResult fit_hyperplane(const std::vector<VectorXd>& points);

struct BoundaryPoint {
    VectorXd point;
    std::optional<Hyperplane> local_hyperplane;
    Segment source_segment;
};

struct ProbeConfig {
    double segment_radius = 10.0;  // R: sampled segments are tangent to this sphere
    double segment_length = 20.0;  // L

    double tol_point_rel = 1e-9;    // bisection bracket width, relative to segment length
    double tol_point_floor = 1e-11; // absolute floor (scaled by coordinate magnitude)
    double tol_flat = 1e-6;         // normalized-secant equality tolerance
    double insert_handoff = 1e-3;   // triple width (fraction of segment) where bisection takes over
    int max_scan_passes = 64;

    double tol_on_plane = 1e-6;
    double tol_fit = 1e-5;          // degenerate-fit residual threshold
    int fit_oversample = 2;         // fit probes = oversample * n_in
    double fit_radius_factor = 1e-3;  // local sampling radius = factor * segment_radius

    int test_points = 20;             // far probes per hyperplane test
    double test_radius_factor = 10.0; // far-probe distance = factor * max(1, |p|)
    double test_band_base = 1e-3;     // accepted distance from H = base + slope * probe distance
    double test_band_slope = 1e-5;

    double fit_radius() const { return fit_radius_factor * segment_radius; }
    double tol_point_abs(const Segment& seg) const;
};

// Budget ran out mid-scan; carries whatever boundary points were already
// located on the segment.
class PartialScanError : public Error {
public:
    PartialScanError(std::vector<BoundaryPoint> pts, uint64_t used)
        : Error("query budget exhausted mid-scan"), found(std::move(pts)), queries_used(used) {}
    std::vector<BoundaryPoint> found;
    uint64_t queries_used;
};

// Approximates the intersection of the segment with the network boundary:
// returns gradient-discontinuity points in order along the segment. Between
// consecutive returned points the restriction of the oracle to the segment is
// affine within tolerance.
std::vector<BoundaryPoint> points_on_line(Oracle& oracle, const Segment& seg,
                                          const ProbeConfig& cfg);

// Segment of length L tangent at its midpoint to the sphere of radius R.
Segment sample_segment(Rng& rng, int dim, double radius, double length);

struct InferOptions {
    double radius = 0.0;                   // 0 = config default
    std::optional<VectorXd> transversal;   // default: source-segment direction
    std::optional<Hyperplane> keep_side;   // sample probe centers where signed dist > 0
};

// Fits the local hyperplane of the boundary through a boundary point by
// re-locating the crossing on short segments around it and regressing.
// Throws DegenerateFitError when the neighbourhood is not flat (the point is
// likely near a boundary intersection; callers resample).
Hyperplane infer_hyperplane(Oracle& oracle, const BoundaryPoint& p, const ProbeConfig& cfg,
                            Rng& rng, const InferOptions& opts = {});

struct HyperplaneTestResult {
    bool contained = false;
    std::vector<VectorXd> crossings;  // boundary points found on H by the far probes
};

// Tests whether the whole hyperplane lies in the network boundary by probing
// short transversals at points far from p. Conjunctive over probes, so adding
// probes never flips a reject into an accept.
HyperplaneTestResult test_hyperplane(Oracle& oracle, const BoundaryPoint& p, const Hyperplane& h,
                                     const ProbeConfig& cfg, Rng& rng, int n_points_override = 0);

}  // namespace relex
