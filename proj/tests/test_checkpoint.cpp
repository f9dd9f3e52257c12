#include <doctest.h>

#include <sstream>

#include "mifcn/checkpoint.hpp"
#include "support.hpp"

using namespace mifcn;

namespace {

ModelConfig config_with(int branches) {
  ModelConfig c;
  c.branches = branches;
  c.channels = 3;
  c.branch_layers = 2;
  c.dilations = {1, 2};
  c.h = 123.5;
  c.alpha = 0.1;
  return c;
}

bool same_params(const MifcnParams& a, const MifcnParams& b) {
  std::vector<std::pair<std::string, Tensor>> la, lb;
  for_each_param(a, [&](const std::string& n, const Tensor& t) { la.emplace_back(n, t); });
  for_each_param(b, [&](const std::string& n, const Tensor& t) { lb.emplace_back(n, t); });
  return la.size() == lb.size() && std::equal(la.begin(), la.end(), lb.begin(), [](const auto& x, const auto& y) {
           return x.first == y.first && x.second == y.second;
         });
}

}  // namespace

TEST_CASE("round trip is bit-exact") {
  testing::TempDir dir("ckpt");
  const ModelConfig c = config_with(3);
  const MifcnParams p = identity_init(c, 77, 0.3);
  save_checkpoint(p, c, dir / "m.ckpt");
  const Checkpoint back = load_checkpoint(dir / "m.ckpt");
  CHECK(back.config == c);
  CHECK(same_params(back.params, p));
  CHECK(back.params.branches[2].hidden[1].dilation == 2);

  save_checkpoint(back.params, back.config, dir / "again.ckpt");
  CHECK(testing::read_bytes(dir / "m.ckpt") == testing::read_bytes(dir / "again.ckpt"));
  CHECK(testing::read_bytes(dir / "m.ckpt").starts_with("MIFCNCKP"));
}

TEST_CASE("truncated and corrupt files are rejected") {
  const ModelConfig c = config_with(2);
  std::ostringstream os;
  write_checkpoint(os, identity_init(c, 1), c);
  const std::string bytes = os.str();
  for (std::size_t cut : {std::size_t{0}, std::size_t{5}, std::size_t{40}, bytes.size() / 2, bytes.size() - 1}) {
    std::istringstream is(bytes.substr(0, cut));
    CHECK_THROWS_AS(read_checkpoint(is), DataError);
  }
  std::string wrong_magic = bytes;
  wrong_magic[0] = 'X';
  std::istringstream a(wrong_magic);
  CHECK_THROWS_AS(read_checkpoint(a), DataError);

  std::string wrong_version = bytes;
  wrong_version[8] = 9;
  std::istringstream b(wrong_version);
  CHECK_THROWS_AS(read_checkpoint(b), DataError);

  std::istringstream trailing(bytes + "x");
  CHECK_THROWS_AS(read_checkpoint(trailing), DataError);
  CHECK_THROWS_AS(load_checkpoint("/nonexistent/m.ckpt"), DataError);
}

TEST_CASE("loading against a different architecture is an explicit error") {
  testing::TempDir dir("ckpt");
  const ModelConfig c = config_with(3);
  save_checkpoint(identity_init(c, 1), c, dir / "m.ckpt");
  CHECK_NOTHROW(load_checkpoint(dir / "m.ckpt", c));
  try {
    load_checkpoint(dir / "m.ckpt", config_with(5));
    FAIL("expected an error");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("T=3") != std::string::npos);
  }
  CHECK_THROWS_AS(save_checkpoint(identity_init(c, 1), config_with(2), dir / "x.ckpt"), PreconditionError);
}
