#ifndef QMEM_SPATIAL_PROPAGATOR_HPP
#define QMEM_SPATIAL_PROPAGATOR_HPP

#include <qmem/core.hpp>

#include <span>
#include <vector>

namespace qmem {

/**
 * Left-to-right integrator for the linear field equation
 *
 *     dA/dz = a(z) A + q(z) w(z)
 *
 * with classical RK4 steps of size dz. The coefficient profiles a and q are
 * fixed at construction (grid points plus interval midpoints); only the
 * source w and the boundary value change between calls. Each RK4 step is
 * stored as the affine map
 *
 *     A[j+1] = T[j] A[j] + e0[j] w[j] + eh[j] w[j+1/2] + e1[j] w[j+1]
 *
 * with w[j+1/2] obtained by cubic interpolation of the grid samples.
 */
class spatial_propagator
{
public:
    spatial_propagator() = default;

    spatial_propagator(std::span<const complex> a_nodes,
                       std::span<const complex> a_mids,
                       std::span<const complex> q_nodes,
                       std::span<const complex> q_mids, double dz);

    std::size_t size() const { return m_nz; }

    /*
     * Integrates from boundary value a0 with source scale*w. `mids` is
     * scratch space of nz-1 entries; `out` receives nz values.
     */
    void march(complex a0, std::span<const complex> w, complex scale,
               std::span<complex> mids, std::span<complex> out) const;

    /* homogeneous transfer A(L)/A(0) */
    complex transmission() const;

private:
    std::size_t m_nz = 0;
    std::vector<complex> m_t;
    std::vector<complex> m_e0;
    std::vector<complex> m_eh;
    std::vector<complex> m_e1;
};

}

#endif
