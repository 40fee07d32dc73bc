#ifndef FEDSIM_LOG_HPP
#define FEDSIM_LOG_HPP

#include <string>

namespace fedsim {

// Diagnostic notes (fallbacks, substitutions) go to stderr so they never
// perturb deterministic artifact files.
void log_note(const std::string& message);

// Silence notes (used by tests that exercise fallback paths on purpose).
void set_log_enabled(bool enabled);

}  // namespace fedsim

#endif  // FEDSIM_LOG_HPP
