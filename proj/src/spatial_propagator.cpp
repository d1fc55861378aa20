#include <qmem/spatial_propagator.hpp>
#include <qmem/errors.hpp>

namespace qmem {

namespace {

/* one RK4 step of A' = a A + b with a, b sampled at z, z+h/2, z+h */
complex rk4_linear(complex a_in, complex a0, complex ah, complex a1,
                   complex b0, complex bh, complex b1, double h)
{
    const complex k1 = a0 * a_in + b0;
    const complex k2 = ah * (a_in + 0.5 * h * k1) + bh;
    const complex k3 = ah * (a_in + 0.5 * h * k2) + bh;
    const complex k4 = a1 * (a_in + h * k3) + b1;
    return a_in + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

}

spatial_propagator::spatial_propagator(std::span<const complex> a_nodes,
                                       std::span<const complex> a_mids,
                                       std::span<const complex> q_nodes,
                                       std::span<const complex> q_mids,
                                       double dz) :
    m_nz(a_nodes.size())
{
    if (m_nz < 2 || a_mids.size() != m_nz - 1 ||
        q_nodes.size() != m_nz || q_mids.size() != m_nz - 1) {
        throw validation_error("spatial_propagator: inconsistent sizes");
    }
    const std::size_t n = m_nz - 1;
    m_t.resize(n);
    m_e0.resize(n);
    m_eh.resize(n);
    m_e1.resize(n);

    /* the step is linear in (A, b0, bh, b1): read off its coefficients */
    const complex one{1.0, 0.0};
    const complex zero{};
    for (std::size_t j = 0; j < n; ++j) {
        const complex a0 = a_nodes[j];
        const complex ah = a_mids[j];
        const complex a1 = a_nodes[j + 1];
        m_t[j] = rk4_linear(one, a0, ah, a1, zero, zero, zero, dz);
        m_e0[j] = rk4_linear(zero, a0, ah, a1, one, zero, zero, dz) *
            q_nodes[j];
        m_eh[j] = rk4_linear(zero, a0, ah, a1, zero, one, zero, dz) *
            q_mids[j];
        m_e1[j] = rk4_linear(zero, a0, ah, a1, zero, zero, one, dz) *
            q_nodes[j + 1];
    }
}

void spatial_propagator::march(complex a0, std::span<const complex> w,
                               complex scale, std::span<complex> mids,
                               std::span<complex> out) const
{
    out[0] = a0;
    if (scale == complex{}) {
        for (std::size_t j = 0; j + 1 < m_nz; ++j) {
            out[j + 1] = m_t[j] * out[j];
        }
        return;
    }
    interval_midpoints<complex>(w, mids);
    for (std::size_t j = 0; j + 1 < m_nz; ++j) {
        const complex src =
            m_e0[j] * w[j] + m_eh[j] * mids[j] + m_e1[j] * w[j + 1];
        out[j + 1] = m_t[j] * out[j] + scale * src;
    }
}

complex spatial_propagator::transmission() const
{
    complex t{1.0, 0.0};
    for (const auto& v : m_t) {
        t *= v;
    }
    return t;
}

}
