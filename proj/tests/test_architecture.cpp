// Structural checks on the header tree itself: include hygiene rules that
// keep the library embeddable (one HTTP dependency seam, a complete umbrella
// header, include-what-you-use at the top level).

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>

#include <catch2/catch_amalgamated.hpp>

namespace fs = std::filesystem;

namespace {

const fs::path kHeaderDir = fs::path(SEARCHLOOP_SOURCE_DIR) / "include" / "searchloop";

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::set<std::string> library_headers() {
  std::set<std::string> names;
  for (const auto& entry : fs::directory_iterator(kHeaderDir)) {
    if (entry.path().extension() == ".hpp") names.insert(entry.path().filename().string());
  }
  return names;
}

}  // namespace

TEST_CASE("the header tree is where the build expects it") {
  REQUIRE(fs::is_directory(kHeaderDir));
  const auto names = library_headers();
  CHECK(names.size() >= 16);
  CHECK(names.count("searchloop.hpp") == 1);
}

TEST_CASE("every header uses pragma once") {
  for (const auto& name : library_headers()) {
    INFO(name);
    CHECK(slurp(kHeaderDir / name).find("#pragma once") != std::string::npos);
  }
}

TEST_CASE("the http library is isolated behind the client header") {
  for (const auto& name : library_headers()) {
    const bool uses_httplib = slurp(kHeaderDir / name).find("httplib") != std::string::npos;
    INFO(name);
    if (name == "llm.hpp") {
      CHECK(uses_httplib);
    } else {
      CHECK_FALSE(uses_httplib);
    }
  }
}

TEST_CASE("the umbrella header includes every sibling") {
  const std::string umbrella = slurp(kHeaderDir / "searchloop.hpp");
  for (const auto& name : library_headers()) {
    if (name == "searchloop.hpp") continue;
    INFO(name);
    CHECK(umbrella.find("#include \"searchloop/" + name + "\"") != std::string::npos);
  }
}

TEST_CASE("headers do not depend on the test framework") {
  for (const auto& name : library_headers()) {
    INFO(name);
    CHECK(slurp(kHeaderDir / name).find("catch_amalgamated") == std::string::npos);
  }
}
