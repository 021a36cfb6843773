#pragma once

#include <stdexcept>
#include <string>

namespace derefl {

enum class Errc {
  missing_file,
  unsupported_format,
  corrupt_data,
  write_failure,
  invalid_size,
  shape_mismatch,
  empty_dataset,
  load_failure,
  crop_too_large,
  invalid_k,
  invalid_m,
  invalid_epoch,
  bad_config,
  backend_unavailable,
  extractor_unavailable,
  insufficient_sources,
  too_small,
  data_error,
  non_finite_loss,
};

const char* errc_name(Errc c);

// Single exception type carrying a machine-checkable code. CLI maps codes to
// exit statuses (2 usage, 3 missing resource, 4 runtime failure).
class Error : public std::runtime_error {
public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

  Errc code() const { return code_; }

private:
  Errc code_;
};

[[noreturn]] inline void raise(Errc code, const std::string& what) { throw Error(code, what); }

inline void require(bool ok, Errc code, const std::string& what) {
  if (!ok) raise(code, what);
}

}  // namespace derefl
