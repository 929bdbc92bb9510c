#include <gtest/gtest.h>
#include <spdlog/spdlog.h>

#include "net_guard.hpp"

namespace {

// Fails the run if any test opened (or tried to open) a socket.
class OfflineCheck : public ::testing::Environment {
 public:
  void TearDown() override {
    EXPECT_EQ(net_guard::sockets_attempted(), 0u) << "a test tried to open a socket";
    EXPECT_EQ(net_guard::connects_attempted(), 0u) << "a test tried to connect";
  }
};

}  // namespace

int main(int argc, char** argv) {
  ::testing::InitGoogleTest(&argc, argv);
  spdlog::set_level(spdlog::level::off);
  ::testing::AddGlobalTestEnvironment(new OfflineCheck);
  return RUN_ALL_TESTS();
}
