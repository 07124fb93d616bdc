#pragma once

#include <memory>
#include <string>

#include "qtb/kinematics.hpp"
#include "qtb/types.hpp"

namespace qtb {

/// Total interaction potential U(x) over internal coordinates.
class PotentialModel {
public:
    virtual ~PotentialModel() = default;

    virtual double evaluate(const InternalCoords& x) const = 0;
    /// dU/dx^i, i = 1..3.
    virtual Vec3 gradient(const InternalCoords& x) const = 0;
    virtual std::string name() const = 0;
};

using PotentialPtr = std::shared_ptr<const PotentialModel>;

/// U == 0.
class FreePotential final : public PotentialModel {
public:
    double evaluate(const InternalCoords&) const override { return 0.0; }
    Vec3 gradient(const InternalCoords&) const override { return Vec3::Zero(); }
    std::string name() const override { return "free"; }
};

/// Sum of pair terms V_k(d_k) over (12), (13), (23). Pair terms are written as
/// functions of the squared distance so the chain rule through
/// PairDistanceMap stays polynomial.
class PairwisePotential : public PotentialModel {
public:
    explicit PairwisePotential(const Masses& m) : masses_(m), map_(m) {}

    double evaluate(const InternalCoords& x) const override;
    Vec3 gradient(const InternalCoords& x) const override;

    const PairDistanceMap& distance_map() const { return map_; }
    const Masses& masses() const { return masses_; }

protected:
    struct PairTerm {
        double value;
        double d_value_d_sq;  // dV / d(d^2)
    };
    /// pair: 0 -> (12), 1 -> (13), 2 -> (23).
    virtual PairTerm pair_term(int pair, double dist_sq) const = 0;

    double pair_mass_product(int pair) const;

private:
    Masses masses_;
    PairDistanceMap map_;
};

/// V = -sum G m_i m_j / sqrt(d^2 + softening^2).
class GravityPotential final : public PairwisePotential {
public:
    GravityPotential(const Masses& m, double G, double softening);
    std::string name() const override { return "gravity"; }

    double G() const { return G_; }
    double softening() const { return softening_; }

protected:
    PairTerm pair_term(int pair, double dist_sq) const override;

private:
    double G_;
    double softening_;
};

/// V = sum D [(1 - exp(-alpha (d - d0)))^2 - 1], same parameters for every pair.
class MorsePotential final : public PairwisePotential {
public:
    MorsePotential(const Masses& m, double depth, double alpha, double d0);
    std::string name() const override { return "morse"; }

    double depth() const { return depth_; }
    double alpha() const { return alpha_; }
    double d0() const { return d0_; }

protected:
    PairTerm pair_term(int pair, double dist_sq) const override;

private:
    double depth_;
    double alpha_;
    double d0_;
};

/// |U(x_ref)|, a convenience for choosing the depth scale U0 when the
/// potential has no finite maximum depth (e.g. unsoftened gravity).
double potential_depth_at(const PotentialModel& u, const InternalCoords& x_ref);

}  // namespace qtb
