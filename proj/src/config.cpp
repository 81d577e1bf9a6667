namespace nflba {}
