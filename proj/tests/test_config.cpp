#include <sstream>

#include "car/config.hpp"
#include "doctest.h"

using namespace car;

namespace {

KeyValueConfig parse(const std::string& text) {
  std::istringstream in(text);
  return KeyValueConfig::parse(in);
}

}  // namespace

TEST_CASE("key=value parsing") {
  const auto kv = parse("# comment\n\n d = 16 \nlr=0.01\nvariant = gupm\nd=32\n");
  CHECK(kv.get("d") == "32");
  CHECK(kv.get("lr") == "0.01");
  CHECK(kv.get("variant") == "gupm");
  CHECK(!kv.has("batch"));
  CHECK_THROWS_AS(parse("d 16\n"), ParseError);
  CHECK_THROWS_AS(parse("=3\n"), ParseError);
}

TEST_CASE("training keys overlay the defaults") {
  const auto kv = parse(
      "batch=64\nlr=0.005\nd=16\nn=20\npatience=3\nmax-epochs=30\nseed=9\n"
      "user-embedding=true\nvariant=cppm\nnegatives=50\nk=5,10\n");
  const auto c = apply_train_config(kv, TrainConfig{});
  CHECK(c.batch_size == 64);
  CHECK(c.learning_rate == 0.005);
  CHECK(c.dim == 16);
  CHECK(c.max_len == 20);
  CHECK(c.patience == 3);
  CHECK(c.max_epochs == 30);
  CHECK(c.seed == 9);
  CHECK(c.use_user_embedding);
  CHECK(c.variant == Variant::kCppmOnly);
  CHECK(c.beta1 == TrainConfig{}.beta1);
}

TEST_CASE("bad training keys") {
  CHECK_THROWS_AS(apply_train_config(parse("dim=3\n"), TrainConfig{}), std::invalid_argument);
  CHECK_THROWS_AS(apply_train_config(parse("d=3x\n"), TrainConfig{}), std::invalid_argument);
  CHECK_THROWS_AS(apply_train_config(parse("lr=fast\n"), TrainConfig{}), std::invalid_argument);
  CHECK_THROWS_AS(apply_train_config(parse("user-embedding=maybe\n"), TrainConfig{}),
                  std::invalid_argument);
}
