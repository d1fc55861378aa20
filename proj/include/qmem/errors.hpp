#ifndef QMEM_ERRORS_HPP
#define QMEM_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace qmem {

/**
 * Raised for invalid user-facing input: parameters, grids, schedules,
 * configuration documents.
 */
class validation_error : public std::invalid_argument
{
public:
    explicit validation_error(const std::string& what) :
        std::invalid_argument(what)
    {
    }
};

/**
 * Raised when a numerical integration cannot continue.
 */
class solver_error : public std::runtime_error
{
public:
    enum class kind { blow_up, non_finite, step_control, handoff };

    solver_error(kind k, const std::string& what) :
        std::runtime_error(what), m_kind(k)
    {
    }

    kind get_kind() const { return m_kind; }

private:
    kind m_kind;
};

/* analysis routines that cannot produce a result for the given data */
class analysis_error : public std::runtime_error
{
public:
    explicit analysis_error(const std::string& what) :
        std::runtime_error(what)
    {
    }
};

}

#endif
