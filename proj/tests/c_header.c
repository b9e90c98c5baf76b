/* The public header must compile as C and link against the shared library. */
#include <stdio.h>
#include <string.h>

#include "drl/drl.h"

int main(void) {
  const char* const* cmds = drl_commands();
  double brier = 0.0;
  const double probs[2] = {0.8, 0.2};
  const int labels[1] = {0};
  if (strncmp(drl_version(), "drl ", 4) != 0) return 1;
  if (!cmds[0]) return 1;
  if (drl_brier(probs, labels, 1, 2, &brier) != DRL_OK) return 1;
  if (brier < 0.0799999 || brier > 0.0800001) return 1;
  if (drl_validate_config("train-drl", "{}") != DRL_ERR_CONFIG) return 1;
  printf("%s: %s\n", drl_version(), drl_last_error());
  return 0;
}
