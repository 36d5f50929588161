#ifndef MECE_ERROR_H_
#define MECE_ERROR_H_

#include <stdexcept>
#include <string>

namespace mece {

// error categories surfaced by the library; the CLI maps them to JSON
enum class ErrorKind {
  kValidation,
  kShape,
  kNumeric,
  kPlacement,
  kInput,
  kInstability,
  kState,
  kSchema,
  kParse,
};

const char* ErrorKindName(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

inline const char* ErrorKindName(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kValidation: return "validation";
    case ErrorKind::kShape: return "shape";
    case ErrorKind::kNumeric: return "numeric";
    case ErrorKind::kPlacement: return "placement";
    case ErrorKind::kInput: return "input";
    case ErrorKind::kInstability: return "instability";
    case ErrorKind::kState: return "state";
    case ErrorKind::kSchema: return "schema";
    case ErrorKind::kParse: return "parse";
  }
  return "unknown";
}

}  // namespace mece

#endif  // MECE_ERROR_H_
