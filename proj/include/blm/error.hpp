#pragma once

#include <stdexcept>
#include <string>

namespace blm {

// Every domain failure carries a module-qualified code such as
// "ingest.parse" or "builder.capacity". The CLI maps these to exit code 1.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& message)
      : std::runtime_error(code + ": " + message), code_(std::move(code)) {}

  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

namespace errc {
inline constexpr const char* kIngestParse = "ingest.parse";
inline constexpr const char* kIngestStructure = "ingest.structure";
inline constexpr const char* kIngestFetch = "ingest.fetch";
inline constexpr const char* kIngestIntegrity = "ingest.integrity";
inline constexpr const char* kIngestArgument = "ingest.argument";
inline constexpr const char* kPatternSyntax = "pattern.syntax";
inline constexpr const char* kPatternPool = "pattern.pool";
inline constexpr const char* kPatternSpec = "pattern.spec";
inline constexpr const char* kBuilderConfig = "builder.config";
inline constexpr const char* kBuilderCapacity = "builder.capacity";
inline constexpr const char* kBuilderDerivation = "builder.derivation";
inline constexpr const char* kBuilderFormat = "builder.format";
inline constexpr const char* kTokenizerArgument = "tokenizer.argument";
inline constexpr const char* kTokenizerVocab = "tokenizer.vocab";
inline constexpr const char* kEmbeddingFormat = "embedding.format";
inline constexpr const char* kEmbeddingArgument = "embedding.argument";
inline constexpr const char* kSolverArgument = "solver.argument";
inline constexpr const char* kSolverNumeric = "solver.numeric";
inline constexpr const char* kSolverData = "solver.data";
inline constexpr const char* kSolverFormat = "solver.format";
inline constexpr const char* kEvalArgument = "eval.argument";
inline constexpr const char* kEvalUndefined = "eval.undefined";
inline constexpr const char* kIo = "io";
inline constexpr const char* kConfig = "cli.config";
}  // namespace errc

}  // namespace blm
