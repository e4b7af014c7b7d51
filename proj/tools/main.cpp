#include <cstdio>
#include <exception>
#include <iostream>

#include <nlohmann/json.hpp>

#include "commands.hpp"
#include "nvsed/error.hpp"

namespace {

// One machine-parseable line on stderr for every failure.
int report_error(std::string_view code, const std::string& message) {
  std::cerr << nlohmann::json{{"error", code}, {"message", message}}.dump() << '\n';
  return 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"nvsed: streaming nonverbal sound event detection"};
  app.require_subcommand(1);
  nvsed::cli::register_synth(app);
  nvsed::cli::register_annotate(app);
  nvsed::cli::register_train(app);
  nvsed::cli::register_eval(app);
  nvsed::cli::register_optimize(app);
  nvsed::cli::register_detect(app);
  nvsed::cli::register_personalize(app);
  nvsed::cli::register_audit(app);
  nvsed::cli::register_serve(app);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report_error("usage", e.what());
  } catch (const nvsed::Error& e) {
    return report_error(nvsed::to_string(e.code()), e.what());
  } catch (const nlohmann::json::exception& e) {
    return report_error("format", e.what());
  } catch (const std::exception& e) {
    return report_error("internal", e.what());
  }
  return 0;
}
